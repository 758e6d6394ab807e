//! Comparators between a reference trajectory and a simulated one.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::benchmarks::fnv1a;
use crate::error::{Error, Result};
use crate::sim::TrajectoryRecord;

/// `map[n]` is the position in the reference of the test's `n`-th record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(pub Vec<usize>);

impl Permutation {
    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(n, &i)| n == i)
    }

    /// Positions where the two orders disagree.
    pub fn mismatches(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(n, i)| n != *i)
            .map(|(n, _)| n)
            .collect()
    }

    pub fn hash(&self) -> u64 {
        let bytes: Vec<u8> = self.0.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
        fnv1a(&bytes)
    }

    /// Pairs `(n, i_n)` numbered from 1.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.0.iter().enumerate().map(|(n, &i)| (n + 1, i + 1)).collect()
    }
}

fn match_key(r: &TrajectoryRecord) -> String {
    r.identity().unwrap_or_else(|| format!("runtime={:?}", r.runtime))
}

/// Matches every test record to a reference record with the same query.
/// Repeated queries are matched occurrence by occurrence.
pub fn order_match(reference: &[TrajectoryRecord], test: &[TrajectoryRecord]) -> Result<Permutation> {
    if reference.len() != test.len() {
        return Err(Error::Comparator(format!(
            "trajectories differ in length: {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    let mut slots: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, r) in reference.iter().enumerate().rev() {
        slots.entry(match_key(r)).or_default().push(i);
    }
    let map = test
        .iter()
        .map(|r| {
            let key = match_key(r);
            slots
                .get_mut(&key)
                .and_then(Vec::pop)
                .ok_or_else(|| Error::Comparator(format!("query {key} is not in the reference")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Permutation(map))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Consistency {
    /// Relative error of each test step; `None` where the reference time is zero.
    pub errors: Vec<Option<f64>>,
    pub max: f64,
    pub mean: f64,
    pub skipped: usize,
}

/// Relative finish-time error of every test record against its matched
/// reference record.
pub fn runtime_consistency(test: &[TrajectoryRecord], reference: &[TrajectoryRecord]) -> Result<Consistency> {
    let perm = order_match(reference, test)?;
    let errors: Vec<Option<f64>> = test
        .iter()
        .zip(&perm.0)
        .map(|(t, &i)| {
            let r = reference[i].finish_cumtime;
            (r != 0.0).then(|| (t.finish_cumtime - r).abs() / r.abs())
        })
        .collect();
    let valid: Vec<f64> = errors.iter().flatten().copied().collect();
    let max = valid.iter().copied().fold(0.0, f64::max);
    let mean = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    Ok(Consistency {
        skipped: errors.len() - valid.len(),
        errors,
        max,
        mean,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check: String,
    pub status: Status,
    pub max_rel_err: Option<f64>,
    /// FNV-1a hash of the return-order permutation, in hex.
    pub permutation_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn fail(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            status: Status::Fail,
            max_rel_err: None,
            permutation_hash: None,
            detail: Some(detail.into()),
        }
    }

    pub fn from_bool(check: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            max_rel_err: None,
            permutation_hash: None,
            detail: Some(detail.into()).filter(|d: &String| !d.is_empty()),
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        };
        write!(f, "{status} {}", self.check)?;
        if let Some(e) = self.max_rel_err {
            write!(f, " max_rel_err={e:.3e}")?;
        }
        if let Some(h) = &self.permutation_hash {
            write!(f, " perm={h}")?;
        }
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

/// Order identity plus finish times within `tol`. Comparator errors turn
/// into a failing report.
pub fn compare(check: impl Into<String>, reference: &[TrajectoryRecord], test: &[TrajectoryRecord], tol: f64) -> Report {
    let check = check.into();
    let perm = match order_match(reference, test) {
        Ok(p) => p,
        Err(e) => return Report::fail(check, e.to_string()),
    };
    let consistency = match runtime_consistency(test, reference) {
        Ok(c) => c,
        Err(e) => return Report::fail(check, e.to_string()),
    };
    let identity = perm.is_identity();
    let ok = identity && consistency.max <= tol;
    let mut detail = Vec::new();
    if !identity {
        detail.push(format!("order differs at {} positions", perm.mismatches().len()));
    }
    if consistency.skipped > 0 {
        detail.push(format!("{} zero-time steps skipped", consistency.skipped));
    }
    Report {
        check,
        status: if ok { Status::Pass } else { Status::Fail },
        max_rel_err: Some(consistency.max),
        permutation_hash: Some(format!("{:016x}", perm.hash())),
        detail: Some(detail.join("; ")).filter(|d| !d.is_empty()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn rec(i: usize, finish: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            order_index: i + 1,
            finish_cumtime: finish,
            objectives: BTreeMap::new(),
            worker_index: 0,
            runtime: 1.0,
            sample_overhead: 0.0,
            config: Some(BTreeMap::from([("index".to_string(), i as f64)])),
            args: None,
        }
    }

    fn traj(n: usize) -> Vec<TrajectoryRecord> {
        (0..n).map(|i| rec(i, i as f64 + 1.0)).collect()
    }

    #[test]
    fn identical_is_identity() {
        let t = traj(5);
        let p = order_match(&t, &t).unwrap();
        assert!(p.is_identity());
        assert!(compare("same", &t, &t, 0.0).passed());
    }

    #[test]
    fn swap_is_transposition() {
        let r = traj(5);
        let mut t = r.clone();
        t.swap(2, 3);
        let p = order_match(&r, &t).unwrap();
        assert_eq!(p.0, vec![0, 1, 3, 2, 4]);
        assert_eq!(p.mismatches(), vec![2, 3]);
        assert!(!compare("swap", &r, &t, 1.0).passed());
    }

    #[test]
    fn mismatch_is_error() {
        let r = traj(3);
        let mut t = traj(3);
        t[1].config = Some(BTreeMap::from([("index".to_string(), 99.0)]));
        assert!(matches!(order_match(&r, &t), Err(Error::Comparator(_))));
        assert!(order_match(&r, &traj(2)).is_err());
    }

    #[test]
    fn repeated_queries_match_in_turn() {
        let r = vec![rec(0, 1.0), rec(0, 2.0), rec(1, 3.0)];
        assert!(order_match(&r, &r).unwrap().is_identity());
    }

    #[test]
    fn relative_errors_and_zero_skip() {
        let r = vec![rec(0, 0.0), rec(1, 10.0)];
        let mut t = r.clone();
        t[1].finish_cumtime = 10.1;
        let c = runtime_consistency(&t, &r).unwrap();
        assert_eq!(c.skipped, 1);
        assert!((c.max - 0.01).abs() < 1e-12);
        assert_eq!(c.errors[0], None);
    }

    proptest! {
        #[test]
        fn shuffles_are_recovered(seed in any::<u64>(), n in 1usize..40) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let r = traj(n);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let t: Vec<_> = idx.iter().map(|&i| r[i].clone()).collect();
            let p = order_match(&r, &t).unwrap();
            prop_assert_eq!(p.0, idx);
        }
    }
}

//! Virtual-clock arithmetic shared by every simulator in the crate.
//!
//! Everything here is a pure function over value types. A worker's simulated
//! clock is the sum of the runtimes it evaluated plus the sampling overheads
//! it paid before each evaluation; the benchmark query itself is free.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameter name to scalar value.
pub type Config = BTreeMap<String, f64>;
/// Fidelity name to fidelity value.
pub type Fidels = BTreeMap<String, f64>;
/// Objective (or constraint) name to value.
pub type Objectives = BTreeMap<String, f64>;

/// Fidelity values plus the optional seed passed with one query.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    #[serde(default)]
    pub fidels: Fidels,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl EvalArgs {
    pub fn new(fidels: Fidels, seed: Option<u64>) -> Self {
        Self { fidels, seed }
    }

    /// The only fidelity value, when exactly one fidelity dimension is present.
    pub fn single_fidel(&self) -> Option<(&str, f64)> {
        if self.fidels.len() == 1 {
            self.fidels.iter().next().map(|(k, v)| (k.as_str(), *v))
        } else {
            None
        }
    }

    /// Same arguments with every fidelity value set to zero.
    pub fn at_zero_fidelity(&self) -> Self {
        Self {
            fidels: self.fidels.keys().map(|k| (k.clone(), 0.0)).collect(),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRequest {
    pub config: Config,
    pub args: EvalArgs,
    /// Real seconds the optimizer spent producing this query.
    pub sample_overhead: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub objectives: Objectives,
    /// Runtime charged to the worker clock, after restart calibration.
    pub runtime: f64,
    /// Runtime as reported by the benchmark.
    pub raw_runtime: f64,
}

/// Cached progress of one configuration, used to resume at a higher fidelity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntermediateState {
    /// Benchmark runtime already paid to reach `args`' fidelity.
    pub runtime_so_far: f64,
    /// Simulated time at which the state came into existence.
    pub registered_cumtime: f64,
    pub args: EvalArgs,
}

impl IntermediateState {
    /// The "nothing trained yet" state for a request.
    pub fn empty_for(args: &EvalArgs) -> Self {
        Self {
            runtime_so_far: 0.0,
            registered_cumtime: 0.0,
            args: args.at_zero_fidelity(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerClock {
    pub worker_index: usize,
    /// Simulated seconds.
    pub cumtime: f64,
    /// Wall-clock seconds since the Unix epoch.
    pub freed_at: f64,
}

/// One observation in the order it became visible to the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// 1-based chronological rank.
    pub order_index: usize,
    pub finish_cumtime: f64,
    #[serde(with = "nonfinite::map")]
    pub objectives: Objectives,
    pub worker_index: usize,
    pub runtime: f64,
    pub sample_overhead: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<EvalArgs>,
}

impl TrajectoryRecord {
    /// Simulated time at which the sample for this record began.
    pub fn sample_start(&self) -> f64 {
        self.sample_end() - self.sample_overhead
    }

    /// Simulated time at which the evaluation began.
    pub fn sample_end(&self) -> f64 {
        self.finish_cumtime - self.runtime
    }

    /// Identity of the evaluated query, used to match records across runs.
    pub fn identity(&self) -> Option<String> {
        let config = self.config.as_ref()?;
        let args = self.args.clone().unwrap_or_default();
        let mut key = config_key(config, args.seed);
        for (k, v) in &args.fidels {
            let _ = write!(key, "|{k}={v:.16e}");
        }
        Some(key)
    }
}

/// Sorts records by (finish time, worker) and renumbers `order_index` from 1.
pub fn canonical_order(records: &mut [TrajectoryRecord]) {
    records.sort_by(|a, b| {
        a.finish_cumtime
            .total_cmp(&b.finish_cumtime)
            .then(a.worker_index.cmp(&b.worker_index))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.order_index = i + 1;
    }
}

/// Simulated clock of one worker: the sum of runtime plus sampling overhead
/// over every sample it processed.
pub fn cumulative_runtime(runtimes: &[f64], overheads: &[f64]) -> Result<f64> {
    if runtimes.len() != overheads.len() {
        return Err(Error::Contract(format!(
            "{} runtimes but {} overheads",
            runtimes.len(),
            overheads.len()
        )));
    }
    if let Some(bad) = runtimes.iter().chain(overheads).find(|v| !(**v >= 0.0)) {
        return Err(Error::Contract(format!("negative or NaN duration {bad}")));
    }
    Ok(runtimes.iter().zip(overheads).map(|(r, t)| r + t).sum())
}

/// Index of the worker that becomes free first. Ties go to the lowest index.
pub fn next_worker(cumtimes: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in cumtimes.iter().enumerate() {
        match best {
            Some((_, b)) if c >= b => {}
            _ => best = Some((i, c)),
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Contract("no workers to choose from".into()))
}

/// Whether a worker whose clock reads `own_cumtime` may hand its result back.
///
/// `t_now` is how long the worker currently holding the minimal clock has
/// been sampling; anything finishing inside that window is already in the
/// past for the optimizer.
pub fn may_return(own_cumtime: f64, all_cumtimes: &[f64], t_now: f64) -> bool {
    let min = all_cumtimes.iter().copied().fold(f64::INFINITY, f64::min);
    own_cumtime == min || own_cumtime <= min + t_now
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub runtime: f64,
    /// Set when the prior runtime exceeded the full runtime and the result
    /// was clamped to zero.
    pub clamped: bool,
}

/// Runtime left to pay when resuming from a state that already paid
/// `prior_runtime`.
pub fn calibrate_runtime(full_runtime: f64, prior_runtime: f64) -> Calibration {
    let diff = full_runtime - prior_runtime;
    if diff < 0.0 {
        Calibration {
            runtime: 0.0,
            clamped: true,
        }
    } else {
        Calibration {
            runtime: diff,
            clamped: false,
        }
    }
}

/// Whether `state` can be used to resume `request` on a worker whose clock
/// reads `worker_cumtime`.
///
/// The request must ask for a strictly higher fidelity with the same seed,
/// and the state must have been registered no later than the moment this
/// sample was drawn.
pub fn validate_state(
    state: &IntermediateState,
    request: &EvalRequest,
    worker_cumtime: f64,
) -> Result<bool> {
    let Some((key, requested)) = request.args.single_fidel() else {
        return Err(Error::Config(format!(
            "continual evaluation needs exactly one fidelity, request has {}",
            request.args.fidels.len()
        )));
    };
    let higher = match state.args.fidels.get(key) {
        Some(&held) => state.args.fidels.len() == 1 && held < requested,
        None => false,
    };
    let same_args = state.args.seed == request.args.seed;
    let registered_before =
        state.registered_cumtime <= worker_cumtime + request.sample_overhead;
    Ok(higher && same_args && registered_before)
}

/// Moves the global sampling clock past a newly finished sample and returns
/// the simulated time at which the sample ended.
pub fn advance_sampling_clock(global_now: f64, worker_cumtime: f64, sample_overhead: f64) -> f64 {
    global_now.max(worker_cumtime) + sample_overhead
}

/// Canonical identity of a configuration plus seed, stable across processes.
///
/// Keys are sorted and values are rendered with 17 significant digits.
pub fn config_key(config: &Config, seed: Option<u64>) -> String {
    let mut key = String::new();
    for (name, value) in config {
        let _ = write!(key, "{name}={value:.16e};");
    }
    match seed {
        Some(s) => {
            let _ = write!(key, "seed={s}");
        }
        None => key.push_str("seed=none"),
    }
    key
}

/// JSON cannot carry infinities; they are written as `null` and read back
/// as `+inf`.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }

    pub mod map {
        use std::collections::BTreeMap;

        use serde::ser::SerializeMap;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            let mut out = s.serialize_map(Some(m.len()))?;
            for (k, v) in m {
                if v.is_finite() {
                    out.serialize_entry(k, v)?;
                } else {
                    out.serialize_entry(k, &Option::<f64>::None)?;
                }
            }
            out.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            let raw = BTreeMap::<String, Option<f64>>::deserialize(d)?;
            Ok(raw
                .into_iter()
                .map(|(k, v)| (k, v.unwrap_or(f64::INFINITY)))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn epoch_args(epoch: f64) -> EvalArgs {
        EvalArgs::new([("epoch".to_string(), epoch)].into(), None)
    }

    fn request(epoch: f64, overhead: f64) -> EvalRequest {
        EvalRequest {
            config: [("x".to_string(), 0.5)].into(),
            args: epoch_args(epoch),
            sample_overhead: overhead,
        }
    }

    #[test]
    fn cumulative_runtime_examples() {
        assert_eq!(cumulative_runtime(&[], &[]).unwrap(), 0.0);
        assert_eq!(cumulative_runtime(&[5.0, 7.0], &[1.0, 2.0]).unwrap(), 15.0);
        let first = cumulative_runtime(&[200.0], &[0.0]).unwrap();
        let second = cumulative_runtime(&[100.0], &[0.0]).unwrap();
        assert_eq!(next_worker(&[first, second]).unwrap(), 1);
    }

    #[test]
    fn cumulative_runtime_rejects_mismatch() {
        assert!(matches!(
            cumulative_runtime(&[1.0], &[]),
            Err(Error::Contract(_))
        ));
        assert!(cumulative_runtime(&[-1.0], &[0.0]).is_err());
    }

    #[test]
    fn next_worker_examples() {
        assert_eq!(next_worker(&[0.0, 0.0, 0.0, 0.0]).unwrap(), 0);
        assert_eq!(next_worker(&[200.0, 100.0]).unwrap(), 1);
        assert_eq!(next_worker(&[30.0, 30.0, 10.0, 40.0]).unwrap(), 2);
        assert!(matches!(next_worker(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn may_return_examples() {
        assert!(may_return(10.0, &[10.0, 20.0, 30.0, 40.0], 0.0));
        assert!(!may_return(25.0, &[10.0, 25.0, 30.0], 0.0));
        assert!(may_return(25.0, &[10.0, 25.0, 30.0], 20.0));
    }

    #[test]
    fn calibrate_examples() {
        assert_eq!(calibrate_runtime(100.0, 0.0).runtime, 100.0);
        assert_eq!(calibrate_runtime(100.0, 30.0).runtime, 70.0);
        let c = calibrate_runtime(100.0, 120.0);
        assert_eq!(c.runtime, 0.0);
        assert!(c.clamped);
        assert!(!calibrate_runtime(100.0, 30.0).clamped);
    }

    #[test]
    fn validate_state_examples() {
        let state = IntermediateState {
            runtime_so_far: 30.0,
            registered_cumtime: 50.0,
            args: epoch_args(20.0),
        };
        assert!(validate_state(&state, &request(100.0, 1.0), 90.0).unwrap());
        assert!(!validate_state(&state, &request(10.0, 1.0), 90.0).unwrap());

        let late = IntermediateState {
            registered_cumtime: 200.0,
            ..state.clone()
        };
        assert!(!validate_state(&late, &request(100.0, 1.0), 90.0).unwrap());

        let other_seed = IntermediateState {
            args: EvalArgs::new(epoch_args(20.0).fidels, Some(3)),
            ..state
        };
        assert!(!validate_state(&other_seed, &request(100.0, 1.0), 90.0).unwrap());
    }

    #[test]
    fn validate_state_rejects_multi_fidelity() {
        let mut req = request(10.0, 0.0);
        req.args.fidels.insert("resolution".into(), 0.5);
        let state = IntermediateState::empty_for(&req.args);
        assert!(matches!(
            validate_state(&state, &req, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn advance_clock_examples() {
        assert_eq!(advance_sampling_clock(0.0, 0.0, 0.0), 0.0);
        assert_eq!(advance_sampling_clock(12.0, 10.0, 3.0), 15.0);
        assert_eq!(advance_sampling_clock(10.0, 12.0, 3.0), 15.0);
    }

    #[test]
    fn config_key_is_order_independent_and_exact() {
        let a: Config = [("b".to_string(), 0.1), ("a".to_string(), 1.0 / 3.0)].into();
        let mut b = Config::new();
        b.insert("a".into(), 1.0 / 3.0);
        b.insert("b".into(), 0.1);
        assert_eq!(config_key(&a, Some(1)), config_key(&b, Some(1)));
        assert_ne!(config_key(&a, Some(1)), config_key(&a, None));
        let mut c = a.clone();
        c.insert("b".into(), f64::from_bits(0.1f64.to_bits() + 1));
        assert_ne!(config_key(&a, None), config_key(&c, None));
    }

    #[test]
    fn nonfinite_objectives_round_trip() {
        let rec = TrajectoryRecord {
            order_index: 1,
            finish_cumtime: 1.0,
            objectives: [("loss".to_string(), f64::INFINITY)].into(),
            worker_index: 0,
            runtime: 0.0,
            sample_overhead: 0.0,
            config: None,
            args: None,
        };
        let text = serde_json::to_string(&rec).unwrap();
        assert!(text.contains("\"loss\":null"));
        let back: TrajectoryRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.objectives["loss"], f64::INFINITY);
    }

    proptest! {
        #[test]
        fn next_worker_is_argmin_and_shift_invariant(
            c in prop::collection::vec(0.0f64..1e6, 1..16),
            shift in 1e-3f64..1e3,
        ) {
            let i = next_worker(&c).unwrap();
            let min = c.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(c[i], min);
            prop_assert!(c[..i].iter().all(|&v| v > min));
            // Shift by a power of two keeps the comparison exact.
            let shifted: Vec<f64> = c.iter().map(|v| v + shift.round()).collect();
            prop_assert_eq!(next_worker(&shifted).unwrap(), i);
        }

        #[test]
        fn may_return_monotone_in_window(
            c in prop::collection::vec(0.0f64..1e4, 1..8),
            pick in 0usize..8,
            t in 0.0f64..1e4,
            dt in 0.0f64..1e4,
        ) {
            let own = c[pick % c.len()];
            if may_return(own, &c, t) {
                prop_assert!(may_return(own, &c, t + dt));
            }
        }

        #[test]
        fn cumulative_runtime_permutation_invariant_and_increasing(
            pairs in prop::collection::vec((0.0f64..1e3, 0.0f64..1e2), 1..20),
            bump in 1e-3f64..10.0,
        ) {
            let (r, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let total = cumulative_runtime(&r, &t).unwrap();
            let mut rev = pairs.clone();
            rev.reverse();
            let (rr, tr): (Vec<f64>, Vec<f64>) = rev.into_iter().unzip();
            let total_rev = cumulative_runtime(&rr, &tr).unwrap();
            prop_assert!((total - total_rev).abs() <= 1e-9 * total.max(1.0));
            let mut r2 = r.clone();
            r2[0] += bump;
            prop_assert!(cumulative_runtime(&r2, &t).unwrap() > total);
        }

        #[test]
        fn calibration_telescopes_on_monotone_chains(
            mut fids in prop::collection::vec(1u32..500, 2..8),
            scale in 0.1f64..100.0,
        ) {
            fids.sort_unstable();
            fids.dedup();
            let runtime = |f: u32| scale * (0.05 + 0.95 * (f as f64 / 500.0).powf(1.5));
            let mut prior = 0.0;
            let mut paid = 0.0;
            for &f in &fids {
                paid += calibrate_runtime(runtime(f), prior).runtime;
                prior = runtime(f);
            }
            let last = runtime(*fids.last().unwrap());
            prop_assert!((paid - last).abs() <= 1e-9 * last);
        }

        #[test]
        fn empty_state_always_valid(epoch in 1e-6f64..1e3, cum in 0.0f64..1e6, t in 0.0f64..10.0) {
            let req = request(epoch, t);
            let state = IntermediateState::empty_for(&req.args);
            prop_assert!(validate_state(&state, &req, cum).unwrap());
        }
    }
}

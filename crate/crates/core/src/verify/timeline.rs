//! Per-worker timelines rebuilt from a trajectory, and their text export.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TrajectoryRecord;
use crate::verify::oracle::{EventKind, OracleEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Sampling,
    Evaluating,
    Waiting,
}

impl IntervalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalKind::Sampling => "sampling",
            IntervalKind::Evaluating => "evaluating",
            IntervalKind::Waiting => "waiting",
        }
    }
}

impl FromStr for IntervalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampling" => Ok(IntervalKind::Sampling),
            "evaluating" => Ok(IntervalKind::Evaluating),
            "waiting" => Ok(IntervalKind::Waiting),
            other => Err(Error::Config(format!("unknown interval kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub worker: usize,
    pub start: f64,
    pub end: f64,
    pub kind: IntervalKind,
}

impl Interval {
    pub fn new(worker: usize, start: f64, end: f64, kind: IntervalKind) -> Self {
        Self {
            worker,
            start,
            end,
            kind,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

fn by_worker(records: &[TrajectoryRecord]) -> Vec<&TrajectoryRecord> {
    let mut sorted: Vec<&TrajectoryRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.worker_index
            .cmp(&b.worker_index)
            .then(a.sample_start().total_cmp(&b.sample_start()))
    });
    sorted
}

/// Waiting, sampling and evaluating intervals of every worker. Zero-length
/// intervals are dropped. Sorted by worker, then start.
pub fn intervals(records: &[TrajectoryRecord]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut free_since: Option<(usize, f64)> = None;
    for r in by_worker(records) {
        let w = r.worker_index;
        let idle_from = match free_since {
            Some((k, t)) if k == w => t,
            _ => 0.0,
        };
        let (start, end) = (r.sample_start(), r.sample_end());
        if start > idle_from {
            out.push(Interval::new(w, idle_from, start, IntervalKind::Waiting));
        }
        if end > start {
            out.push(Interval::new(w, start, end, IntervalKind::Sampling));
        }
        if r.finish_cumtime > end {
            out.push(Interval::new(w, end, r.finish_cumtime, IntervalKind::Evaluating));
        }
        free_since = Some((w, r.finish_cumtime));
    }
    out
}

/// Sample, sample-end and evaluation-end events, ranked by the start of
/// sampling (ties by worker). Sorted by time, then worker.
pub fn events(records: &[TrajectoryRecord]) -> Vec<OracleEvent> {
    let mut ranked: Vec<&TrajectoryRecord> = records.iter().collect();
    ranked.sort_by(|a, b| {
        a.sample_start()
            .total_cmp(&b.sample_start())
            .then(a.worker_index.cmp(&b.worker_index))
    });
    let mut out = Vec::with_capacity(3 * records.len());
    for (i, r) in ranked.into_iter().enumerate() {
        let mk = |kind, time| OracleEvent {
            kind,
            time,
            worker: r.worker_index,
            sample: i + 1,
        };
        out.push(mk(EventKind::SampleStart, r.sample_start()));
        out.push(mk(EventKind::SampleEnd, r.sample_end()));
        out.push(mk(EventKind::EvalEnd, r.finish_cumtime));
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.worker.cmp(&b.worker)));
    out
}

pub const HEADER: &str = "worker\tstart\tend\tkind";

/// Tab-separated table with a header line. Times are written with enough
/// digits to round-trip.
pub fn to_text(intervals: &[Interval]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for i in intervals {
        let _ = writeln!(s, "{}\t{:?}\t{:?}\t{}", i.worker, i.start, i.end, i.kind.as_str());
    }
    s
}

pub fn from_text(text: &str) -> Result<Vec<Interval>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        None => return Ok(Vec::new()),
        Some(h) => return Err(Error::Config(format!("unexpected timeline header {h:?}"))),
    }
    let bad = |line: &str| Error::Config(format!("malformed timeline row {line:?}"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(line));
            }
            Ok(Interval {
                worker: cols[0].parse().map_err(|_| bad(line))?,
                start: cols[1].parse().map_err(|_| bad(line))?,
                end: cols[2].parse().map_err(|_| bad(line))?,
                kind: cols[3].parse()?,
            })
        })
        .collect()
}

/// True when a worker that finished an evaluation had to queue before its
/// next sample started. The first sample of each worker is not counted,
/// since those are serialized from time zero. Start times are rebuilt by
/// subtraction, so gaps below a relative 1e-9 count as none.
pub fn has_sampling_wait(records: &[TrajectoryRecord]) -> bool {
    by_worker(records).windows(2).any(|w| {
        let free = w[0].finish_cumtime;
        w[0].worker_index == w[1].worker_index && w[1].sample_start() - free > 1e-9 * free.abs().max(1.0)
    })
}

/// Divides every time by `kappa`, for comparing scaled runs.
pub fn rescale(intervals: &[Interval], kappa: f64) -> Vec<Interval> {
    intervals
        .iter()
        .map(|i| Interval {
            start: i.start / kappa,
            end: i.end / kappa,
            ..*i
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(worker: usize, finish: f64, runtime: f64, overhead: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            order_index: 0,
            finish_cumtime: finish,
            objectives: BTreeMap::new(),
            worker_index: worker,
            runtime,
            sample_overhead: overhead,
            config: None,
            args: None,
        }
    }

    #[test]
    fn rebuilds_waiting_and_sampling() {
        let recs = vec![rec(0, 5.0, 4.0, 1.0), rec(1, 9.0, 6.0, 2.0), rec(0, 12.0, 2.0, 1.0)];
        let iv = intervals(&recs);
        assert_eq!(
            iv,
            vec![
                Interval::new(0, 0.0, 1.0, IntervalKind::Sampling),
                Interval::new(0, 1.0, 5.0, IntervalKind::Evaluating),
                Interval::new(0, 5.0, 9.0, IntervalKind::Waiting),
                Interval::new(0, 9.0, 10.0, IntervalKind::Sampling),
                Interval::new(0, 10.0, 12.0, IntervalKind::Evaluating),
                Interval::new(1, 0.0, 1.0, IntervalKind::Waiting),
                Interval::new(1, 1.0, 3.0, IntervalKind::Sampling),
                Interval::new(1, 3.0, 9.0, IntervalKind::Evaluating),
            ]
        );
        assert!(has_sampling_wait(&recs));
    }

    #[test]
    fn text_round_trip() {
        let iv = vec![
            Interval::new(0, 0.0, 0.1, IntervalKind::Sampling),
            Interval::new(3, 0.1, 1.0 / 3.0, IntervalKind::Evaluating),
        ];
        assert_eq!(from_text(&to_text(&iv)).unwrap(), iv);
        assert_eq!(from_text(&to_text(&[])).unwrap(), vec![]);
        assert!(from_text("nope\n").is_err());
    }

    #[test]
    fn events_alternate_per_worker() {
        let recs = vec![rec(0, 5.0, 4.0, 1.0), rec(1, 9.0, 6.0, 2.0), rec(0, 12.0, 2.0, 1.0)];
        let ev = events(&recs);
        assert_eq!(ev.len(), 9);
        for w in 0..2 {
            let kinds: Vec<EventKind> = ev.iter().filter(|e| e.worker == w).map(|e| e.kind).collect();
            for chunk in kinds.chunks(3) {
                assert_eq!(chunk, [EventKind::SampleStart, EventKind::SampleEnd, EventKind::EvalEnd]);
            }
        }
        assert!(ev.windows(2).all(|p| p[0].time <= p[1].time));
    }
}

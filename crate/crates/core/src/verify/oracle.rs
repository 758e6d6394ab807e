//! Brute-force discrete-event reference for a `P`-worker run.
//!
//! Written independently of the simulators: time advances through an event
//! heap, free workers queue for a single optimizer in order of the time they
//! became free, and every event is recorded.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::benchmarks::RuntimeSequence;
use crate::error::{Error, Result};
use crate::optimizers::{sequence_objective, FixedConfigSampler, SamplingCost};
use crate::scs::{Ask, AskTellOptimizer};
use crate::sim::{Config, EvalArgs, Objectives, TrajectoryRecord};
use crate::verify::timeline::{Interval, IntervalKind};
use crate::wrapper::{Objective, WrapperConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SampleStart,
    SampleEnd,
    EvalEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEvent {
    pub kind: EventKind,
    pub time: f64,
    pub worker: usize,
    /// 1-based rank of the sample among all samples.
    pub sample: usize,
}

/// How the oracle charges sampling time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleCost {
    /// Zero for every sample.
    Cheap,
    /// `c * (k + 1)` where `k` counts evaluations ended by the sample's start.
    Expensive { c: f64 },
    /// Whatever the optimizer declares, zero when it declares nothing.
    Declared,
}

impl From<SamplingCost> for OracleCost {
    fn from(c: SamplingCost) -> Self {
        match c {
            SamplingCost::Cheap => OracleCost::Cheap,
            SamplingCost::Expensive { c } => OracleCost::Expensive { c },
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleRun {
    pub events: Vec<OracleEvent>,
    /// Results in the order they become visible.
    pub trajectory: Vec<TrajectoryRecord>,
    /// Sample ranks in return order.
    pub order: Vec<usize>,
    pub cumtimes: Vec<f64>,
    pub intervals: Vec<Interval>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Key(f64, u8, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then(self.1.cmp(&other.1))
            .then(self.2.cmp(&other.2))
    }
}

#[derive(Clone, Debug)]
enum Pending {
    /// Worker becomes free and asks for the optimizer.
    Request { worker: usize },
    /// Evaluation `id` ends on `worker`.
    Finish { worker: usize, id: usize },
}

struct Outcome {
    worker: usize,
    sample: usize,
    end: f64,
    config: Config,
    args: EvalArgs,
    objectives: Objectives,
    runtime: f64,
    overhead: f64,
}

struct Cached {
    raw_runtime: f64,
    registered: f64,
    fidel: f64,
    seed: Option<u64>,
}

/// Canonical identity used for the restart cache, built independently of
/// the simulators' key function.
fn cache_key(config: &Config, seed: Option<u64>) -> String {
    let mut parts: Vec<String> = config.iter().map(|(k, v)| format!("{k}:{:?}", v.to_bits())).collect();
    parts.push(format!("seed:{seed:?}"));
    parts.join(",")
}

/// Simulates a run of `optimizer` on `cfg.n_workers` workers.
pub fn oracle_simulate(
    optimizer: &mut dyn AskTellOptimizer,
    objective: &dyn Objective,
    cfg: &WrapperConfig,
    cost: OracleCost,
) -> Result<OracleRun> {
    let p_count = cfg.n_workers;
    if p_count == 0 {
        return Err(Error::Config("at least one worker is needed".into()));
    }
    let mut heap: BinaryHeap<Reverse<(Key, usize)>> = BinaryHeap::new();
    let mut payloads: Vec<Pending> = Vec::new();
    let push = |heap: &mut BinaryHeap<Reverse<(Key, usize)>>,
                payloads: &mut Vec<Pending>,
                time: f64,
                rank: u8,
                worker: usize,
                p: Pending| {
        payloads.push(p);
        heap.push(Reverse((Key(time, rank, worker), payloads.len() - 1)));
    };
    for w in 0..p_count {
        push(&mut heap, &mut payloads, 0.0, 1, w, Pending::Request { worker: w });
    }
    // Requests waiting for the optimizer, keyed by (free time, worker).
    let mut queue: Vec<(f64, usize)> = Vec::new();
    let mut sampler_free = 0.0f64;
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut ended: Vec<usize> = Vec::new();
    let mut told = 0usize;
    let mut parked: Vec<(usize, f64)> = Vec::new();
    let mut cache: BTreeMap<String, Vec<Cached>> = BTreeMap::new();
    let mut events = Vec::new();
    let mut free_since = vec![0.0f64; p_count];
    let mut intervals = Vec::new();
    let mut cumtimes = vec![0.0f64; p_count];
    let mut asked = 0usize;
    let mut visible: Vec<usize> = Vec::new();

    loop {
        let head = queue
            .iter()
            .copied()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let next_event = heap.peek().map(|Reverse((k, _))| k.0);
        let serve_at = head.map(|(t, _)| t.max(sampler_free));
        let process_event = match (serve_at, next_event) {
            (Some(s), Some(e)) => e <= s,
            (None, Some(_)) => true,
            (Some(_), None) => false,
            (None, None) => break,
        };
        if process_event {
            let Reverse((Key(time, _, _), idx)) = heap.pop().expect("peeked");
            match payloads[idx].clone() {
                Pending::Request { worker } => queue.push((time, worker)),
                Pending::Finish { worker, id } => {
                    events.push(OracleEvent {
                        kind: EventKind::EvalEnd,
                        time,
                        worker,
                        sample: outcomes[id].sample,
                    });
                    ended.push(id);
                    let waking: Vec<usize> = parked
                        .iter()
                        .filter(|(_, v)| time > *v)
                        .map(|(w, _)| *w)
                        .collect();
                    parked.retain(|(_, v)| time <= *v);
                    for w in waking {
                        push(&mut heap, &mut payloads, time, 1, w, Pending::Request { worker: w });
                    }
                    push(&mut heap, &mut payloads, time, 1, worker, Pending::Request { worker });
                }
            }
            continue;
        }

        let (free_at, w) = head.expect("checked above");
        queue.retain(|&(_, k)| k != w);
        let start = free_at.max(sampler_free);

        // Every evaluation ended by `start` is observed, in end order.
        let mut newly: Vec<usize> = std::mem::take(&mut ended);
        newly.sort_by(|&a, &b| {
            outcomes[a]
                .end
                .total_cmp(&outcomes[b].end)
                .then(outcomes[a].worker.cmp(&outcomes[b].worker))
        });
        for id in newly {
            let o = &outcomes[id];
            optimizer.tell(&o.config, &o.args, &o.objectives, o.runtime)?;
            told += 1;
            visible.push(id);
        }

        if asked >= cfg.n_evals {
            continue;
        }
        let suggestion = match optimizer.ask()? {
            Ask::Finished => continue,
            Ask::Wait => {
                parked.push((w, start));
                if heap.is_empty() && queue.is_empty() {
                    return Err(Error::Contract(
                        "optimizer asked every worker to wait with nothing in flight".into(),
                    ));
                }
                continue;
            }
            Ask::Suggest(s) => s,
        };
        asked += 1;
        if start > free_since[w] {
            intervals.push(Interval::new(w, free_since[w], start, IntervalKind::Waiting));
        }
        let overhead = match cost {
            OracleCost::Cheap => 0.0,
            OracleCost::Expensive { c } => c * (told as f64 + 1.0),
            OracleCost::Declared => suggestion.overhead.unwrap_or(0.0),
        };
        let sample_end = start + overhead;
        sampler_free = sample_end;
        let sample = asked;
        events.push(OracleEvent {
            kind: EventKind::SampleStart,
            time: start,
            worker: w,
            sample,
        });
        events.push(OracleEvent {
            kind: EventKind::SampleEnd,
            time: sample_end,
            worker: w,
            sample,
        });

        let mut prior = 0.0;
        let key = cache_key(&suggestion.config, suggestion.args.seed);
        let fidel = if cfg.continual() {
            let name = &cfg.fidel_keys[0];
            let f = *suggestion
                .args
                .fidels
                .get(name)
                .ok_or_else(|| Error::Config(format!("request lacks fidelity {name:?}")))?;
            if let Some(list) = cache.get_mut(&key) {
                let best = list
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| {
                        c.fidel < f && c.seed == suggestion.args.seed && c.registered <= free_at + overhead
                    })
                    .max_by(|a, b| a.1.fidel.total_cmp(&b.1.fidel))
                    .map(|(i, _)| i);
                if let Some(i) = best {
                    prior = list.remove(i).raw_runtime;
                }
            }
            Some(f)
        } else {
            None
        };
        let output = objective.call(&suggestion.config, &suggestion.args.fidels, suggestion.args.seed)?;
        let raw = *output
            .get(&cfg.runtime_key)
            .ok_or_else(|| Error::Objective("output lacks runtime".into()))?;
        let objectives: Objectives = cfg
            .obj_keys
            .iter()
            .map(|k| (k.clone(), output.get(k).copied().unwrap_or(f64::NAN)))
            .collect();
        let runtime = if raw > prior { raw - prior } else { 0.0 };
        let end = sample_end + runtime;
        if let Some(f) = fidel {
            cache.entry(key).or_default().push(Cached {
                raw_runtime: raw,
                registered: end,
                fidel: f,
                seed: suggestion.args.seed,
            });
        }
        if overhead > 0.0 {
            intervals.push(Interval::new(w, start, sample_end, IntervalKind::Sampling));
        }
        if runtime > 0.0 {
            intervals.push(Interval::new(w, sample_end, end, IntervalKind::Evaluating));
        }
        free_since[w] = end;
        cumtimes[w] = end;
        outcomes.push(Outcome {
            worker: w,
            sample,
            end,
            config: suggestion.config,
            args: suggestion.args,
            objectives,
            runtime,
            overhead,
        });
        push(
            &mut heap,
            &mut payloads,
            end,
            0,
            w,
            Pending::Finish {
                worker: w,
                id: outcomes.len() - 1,
            },
        );
    }

    let mut rest: Vec<usize> = ended;
    rest.sort_by(|&a, &b| {
        outcomes[a]
            .end
            .total_cmp(&outcomes[b].end)
            .then(outcomes[a].worker.cmp(&outcomes[b].worker))
    });
    visible.extend(rest);
    let trajectory: Vec<TrajectoryRecord> = visible
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let o = &outcomes[id];
            TrajectoryRecord {
                order_index: i + 1,
                finish_cumtime: o.end,
                objectives: o.objectives.clone(),
                worker_index: o.worker,
                runtime: o.runtime,
                sample_overhead: o.overhead,
                config: Some(o.config.clone()),
                args: Some(o.args.clone()),
            }
        })
        .collect();
    let order = visible.iter().map(|&id| outcomes[id].sample).collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.worker.cmp(&b.worker)));
    intervals.sort_by(|a: &Interval, b: &Interval| {
        a.worker.cmp(&b.worker).then(a.start.total_cmp(&b.start))
    });
    Ok(OracleRun {
        events,
        trajectory,
        order,
        cumtimes,
        intervals,
    })
}

/// Reference run of the fixed-configuration sampler over `sequence`.
pub fn oracle_sequence(sequence: &RuntimeSequence, cost: SamplingCost, n_workers: usize) -> Result<OracleRun> {
    let mut sampler = FixedConfigSampler::new(sequence.clone(), cost)?.with_sleep_scale(0.0);
    let cfg = WrapperConfig {
        n_workers,
        n_evals: sequence.len().max(1),
        ..Default::default()
    };
    oracle_simulate(&mut sampler, &sequence_objective, &cfg, cost.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE1: [f64; 20] = [
        100.0, 40.0, 30.0, 20.0, 20.0, 30.0, 40.0, 20.0, 20.0, 30.0, 20.0, 40.0, 30.0, 20.0, 30.0, 20.0, 30.0,
        40.0, 30.0, 10.0,
    ];

    fn starts(run: &OracleRun) -> Vec<(usize, f64)> {
        let mut s: Vec<(usize, f64)> = run
            .events
            .iter()
            .filter(|e| e.kind == EventKind::SampleStart)
            .map(|e| (e.sample, e.time))
            .collect();
        s.sort_by_key(|x| x.0);
        s
    }

    #[test]
    fn two_worker_example() {
        let run = oracle_sequence(&RuntimeSequence(vec![200.0, 100.0]), SamplingCost::Cheap, 2).unwrap();
        assert_eq!(run.order, vec![2, 1]);
        assert_eq!(run.cumtimes, vec![200.0, 100.0]);
    }

    #[test]
    fn case_two_by_hand() {
        let seq = RuntimeSequence(vec![40.0, 60.0, 60.0, 50.0, 50.0, 30.0, 30.0, 30.0]);
        let run = oracle_sequence(&seq, SamplingCost::Expensive { c: 10.0 }, 4).unwrap();
        let expect = [0.0, 10.0, 20.0, 30.0, 50.0, 80.0, 110.0, 160.0];
        let got: Vec<f64> = starts(&run).into_iter().map(|x| x.1).collect();
        assert_eq!(got, expect);
        assert_eq!(run.cumtimes, vec![120.0, 140.0, 190.0, 260.0]);
        // Sample 7 goes to worker 2, free at 90 but the sampler is busy until 110.
        assert!(run
            .intervals
            .iter()
            .any(|i| i.worker == 2 && i.kind == IntervalKind::Waiting && i.start == 90.0 && i.end == 110.0));
    }

    #[test]
    fn case_three_by_hand() {
        let seq = RuntimeSequence(vec![50.0, 130.0, 80.0, 160.0, 130.0, 70.0, 20.0, 30.0]);
        let run = oracle_sequence(&seq, SamplingCost::Expensive { c: 10.0 }, 4).unwrap();
        assert_eq!(run.cumtimes, vec![210.0, 210.0, 210.0, 280.0]);
        let got: Vec<f64> = starts(&run).into_iter().map(|x| x.1).collect();
        assert_eq!(got, [0.0, 10.0, 20.0, 30.0, 60.0, 110.0, 150.0, 200.0]);
    }

    #[test]
    fn case_one_returns_in_end_order() {
        let run = oracle_sequence(&RuntimeSequence(CASE1.to_vec()), SamplingCost::Cheap, 4).unwrap();
        let ends: Vec<f64> = run.trajectory.iter().map(|r| r.finish_cumtime).collect();
        assert!(ends.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(run.trajectory.len(), 20);
        // Per-worker clocks are sums of the runtimes they were given.
        for w in 0..4 {
            let total: f64 = run.trajectory.iter().filter(|r| r.worker_index == w).map(|r| r.runtime).sum();
            assert_eq!(total, run.cumtimes[w]);
        }
    }

    #[test]
    fn deterministic() {
        let seq = RuntimeSequence(CASE1.to_vec());
        let a = oracle_sequence(&seq, SamplingCost::Expensive { c: 1.0 }, 4).unwrap();
        for _ in 0..100 {
            let b = oracle_sequence(&seq, SamplingCost::Expensive { c: 1.0 }, 4).unwrap();
            assert_eq!(a.events, b.events);
        }
    }
}

//! Single-core simulator: one thread drives an ask-and-tell optimizer while
//! emulating `P` workers on virtual clocks.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::sim::{
    advance_sampling_clock, calibrate_runtime, config_key, next_worker, Config, EvalArgs,
    EvalRequest, IntermediateState, Objectives, TrajectoryRecord,
};
use crate::store::{LaunchMode, LogEntry, Phase, Store};
use crate::wrapper::{check_continual_request, select_state, split_output, Objective, WrapperConfig};

/// A configuration to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct Suggestion {
    pub config: Config,
    pub args: EvalArgs,
    /// Sampling time the optimizer charges for this suggestion, in seconds.
    /// `None` lets the driver measure it.
    pub overhead: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Ask {
    Suggest(Suggestion),
    /// Nothing to suggest until another result arrives.
    Wait,
    /// The optimizer has nothing more to evaluate.
    Finished,
}

pub trait AskTellOptimizer: Send {
    fn ask(&mut self) -> Result<Ask>;
    fn tell(&mut self, config: &Config, args: &EvalArgs, objectives: &Objectives, runtime: f64) -> Result<()>;
}

impl<T: AskTellOptimizer + ?Sized> AskTellOptimizer for Box<T> {
    fn ask(&mut self) -> Result<Ask> {
        (**self).ask()
    }

    fn tell(&mut self, config: &Config, args: &EvalArgs, objectives: &Objectives, runtime: f64) -> Result<()> {
        (**self).tell(config, args, objectives, runtime)
    }
}

#[derive(Clone, Debug)]
pub struct ScsOptions {
    /// Charge the measured duration of `ask` when the optimizer does not
    /// declare an overhead.
    pub measure_overhead: bool,
    /// Also write the result log and clock maps to this run directory.
    pub store_dir: Option<std::path::PathBuf>,
}

impl Default for ScsOptions {
    fn default() -> Self {
        Self {
            measure_overhead: true,
            store_dir: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScsOutcome {
    pub trajectory: Vec<TrajectoryRecord>,
    pub cumtimes: Vec<f64>,
    pub wall_seconds: f64,
    /// Number of restarts whose calibration had to be clamped to zero.
    pub clamped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Worker {
    /// Clock reads the end of its last evaluation (or zero).
    Ready,
    /// Told to wait at simulated time `v`.
    Parked(f64),
    Done,
}

/// Runs the optimizer against `P = cfg.n_workers` virtual workers until it
/// finishes or `cfg.n_evals` queries have been asked.
///
/// Each step picks the worker that frees first, tells the optimizer every
/// result finished by the time sampling can start (in finish order, ties by
/// worker), asks, and charges the sampling and calibrated runtime to that
/// worker's clock.
pub fn run_scs(
    optimizer: &mut dyn AskTellOptimizer,
    objective: &dyn Objective,
    cfg: &WrapperConfig,
    options: &ScsOptions,
) -> Result<ScsOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let n = cfg.n_workers;
    let store = match &options.store_dir {
        Some(dir) => Some(Store::create_fresh(dir, n, LaunchMode::InProcess)?),
        None => None,
    };
    if let Some(s) = &store {
        for p in 0..n {
            s.register_worker(&format!("scs:{p}"))?;
        }
    }

    let mut cumtimes = vec![0.0; n];
    let mut workers = vec![Worker::Ready; n];
    let mut t_now = 0.0f64;
    let mut pending: Vec<TrajectoryRecord> = Vec::new();
    let mut finishes: Vec<f64> = Vec::new();
    let mut trajectory: Vec<TrajectoryRecord> = Vec::new();
    let mut states: BTreeMap<String, Vec<IntermediateState>> = BTreeMap::new();
    let mut n_asked = 0usize;
    let mut clamped = 0usize;

    let emit = |trajectory: &mut Vec<TrajectoryRecord>, mut rec: TrajectoryRecord| -> Result<()> {
        rec.order_index = trajectory.len() + 1;
        if let Some(s) = &store {
            let mut entry = LogEntry::from_record(&rec);
            if !cfg.store_config {
                entry.config = None;
                entry.fidels = None;
                entry.seed = None;
            }
            s.append_result_within(&entry, cfg.n_actual_evals())?;
        }
        trajectory.push(rec);
        Ok(())
    };

    loop {
        let keys: Vec<f64> = (0..n)
            .map(|p| match workers[p] {
                Worker::Ready => cumtimes[p],
                Worker::Parked(v) => pending
                    .iter()
                    .map(|r| r.finish_cumtime)
                    .chain(finishes.iter().copied())
                    .filter(|&t| t > v)
                    .fold(f64::INFINITY, f64::min),
                Worker::Done => f64::INFINITY,
            })
            .collect();
        let q = next_worker(&keys)?;
        if !keys[q].is_finite() {
            if workers.iter().any(|w| matches!(w, Worker::Parked(_))) {
                return Err(Error::Contract(
                    "optimizer asked every worker to wait with nothing in flight".into(),
                ));
            }
            break;
        }
        cumtimes[q] = keys[q];
        let v = t_now.max(cumtimes[q]);

        pending.sort_by(|a, b| {
            a.finish_cumtime
                .total_cmp(&b.finish_cumtime)
                .then(a.worker_index.cmp(&b.worker_index))
        });
        let split = pending.partition_point(|r| r.finish_cumtime <= v);
        for rec in pending.drain(..split).collect::<Vec<_>>() {
            optimizer.tell(
                rec.config.as_ref().expect("records keep configs"),
                rec.args.as_ref().expect("records keep args"),
                &rec.objectives,
                rec.runtime,
            )?;
            finishes.push(rec.finish_cumtime);
            emit(&mut trajectory, rec)?;
        }

        if n_asked >= cfg.n_evals {
            workers[q] = Worker::Done;
            continue;
        }
        let asked_at = Instant::now();
        let ask = optimizer.ask()?;
        let ask_seconds = asked_at.elapsed().as_secs_f64();
        let suggestion = match ask {
            Ask::Finished => {
                workers[q] = Worker::Done;
                continue;
            }
            Ask::Wait => {
                workers[q] = Worker::Parked(v);
                continue;
            }
            Ask::Suggest(s) => s,
        };
        n_asked += 1;
        workers[q] = Worker::Ready;
        let overhead = suggestion
            .overhead
            .unwrap_or(if options.measure_overhead { ask_seconds } else { 0.0 });
        let request = EvalRequest {
            config: suggestion.config,
            args: suggestion.args,
            sample_overhead: overhead,
        };

        let mut prior = 0.0;
        let key = config_key(&request.config, request.args.seed);
        if cfg.continual() {
            check_continual_request(cfg, &request.args)?;
            if let Some(list) = states.get_mut(&key) {
                if let Some(i) = select_state(list, &request, cumtimes[q])? {
                    prior = list.remove(i).runtime_so_far;
                }
            }
        }
        let output = objective.call(&request.config, &request.args.fidels, request.args.seed)?;
        let (objectives, raw_runtime) = split_output(&output, cfg)?;
        let calibration = calibrate_runtime(raw_runtime, prior);
        if calibration.clamped {
            clamped += 1;
            log::warn!("worker {q}: runtime {raw_runtime} is below the restart state's {prior}; charging zero");
        }
        t_now = advance_sampling_clock(t_now, cumtimes[q], overhead);
        cumtimes[q] = t_now + calibration.runtime;
        if cfg.continual() {
            states.entry(key).or_default().push(IntermediateState {
                runtime_so_far: raw_runtime,
                registered_cumtime: cumtimes[q],
                args: request.args.clone(),
            });
        }
        pending.push(TrajectoryRecord {
            order_index: 0,
            finish_cumtime: cumtimes[q],
            objectives,
            worker_index: q,
            runtime: calibration.runtime,
            sample_overhead: overhead,
            config: Some(request.config),
            args: Some(request.args),
        });
    }

    pending.sort_by(|a, b| {
        a.finish_cumtime
            .total_cmp(&b.finish_cumtime)
            .then(a.worker_index.cmp(&b.worker_index))
    });
    for rec in pending {
        emit(&mut trajectory, rec)?;
    }
    if let Some(s) = &store {
        for (p, &c) in cumtimes.iter().enumerate() {
            s.update_cumtime(p, c)?;
            s.set_phase(p, Phase::Done)?;
        }
        s.advance_clock(t_now, 0.0)?;
    }
    Ok(ScsOutcome {
        trajectory,
        cumtimes,
        wall_seconds: started.elapsed().as_secs_f64(),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::RuntimeSequence;
    use crate::optimizers::{sequence_objective, FixedConfigSampler, SamplingCost};

    fn cfg(p: usize, n: usize) -> WrapperConfig {
        WrapperConfig {
            n_workers: p,
            n_evals: n,
            ..Default::default()
        }
    }

    fn order(t: &[TrajectoryRecord]) -> Vec<usize> {
        t.iter()
            .map(|r| r.config.as_ref().unwrap()["index"] as usize + 1)
            .collect()
    }

    #[test]
    fn two_worker_example() {
        let mut opt = FixedConfigSampler::new(RuntimeSequence(vec![200.0, 100.0]), SamplingCost::Cheap).unwrap();
        let out = run_scs(&mut opt, &sequence_objective, &cfg(2, 2), &ScsOptions::default()).unwrap();
        assert_eq!(order(&out.trajectory), vec![2, 1]);
        assert_eq!(out.cumtimes, vec![200.0, 100.0]);
    }

    #[test]
    fn single_worker_prefix_sums() {
        let seq = RuntimeSequence(vec![3.0, 1.0, 4.0, 1.0, 5.0]);
        let mut opt = FixedConfigSampler::new(seq.clone(), SamplingCost::Cheap).unwrap();
        let out = run_scs(&mut opt, &sequence_objective, &cfg(1, 5), &ScsOptions::default()).unwrap();
        let mut acc = 0.0;
        for (r, t) in out.trajectory.iter().zip(seq.as_slice()) {
            acc += t;
            assert_eq!(r.finish_cumtime, acc);
        }
        assert_eq!(order(&out.trajectory), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn asks_stop_at_budget() {
        let mut opt = FixedConfigSampler::new(RuntimeSequence(vec![1.0; 10]), SamplingCost::Cheap).unwrap();
        let out = run_scs(&mut opt, &sequence_objective, &cfg(3, 4), &ScsOptions::default()).unwrap();
        assert_eq!(out.trajectory.len(), 4);
        assert_eq!(opt.remaining(), 6);
    }

    #[test]
    fn store_emission_matches_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let mut opt = FixedConfigSampler::new(RuntimeSequence(vec![5.0, 2.0, 7.0, 1.0]), SamplingCost::Cheap).unwrap();
        let options = ScsOptions {
            store_dir: Some(dir.path().join("run")),
            ..Default::default()
        };
        let out = run_scs(&mut opt, &sequence_objective, &cfg(2, 4), &options).unwrap();
        let store = Store::open(dir.path().join("run"), 2, LaunchMode::InProcess).unwrap();
        assert_eq!(store.read_trajectory().unwrap(), out.trajectory);
        assert_eq!(store.read_cumtimes().unwrap(), out.cumtimes);
    }
}

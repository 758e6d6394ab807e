//! In-process driver that lets `P` worker threads share one ask-and-tell
//! optimizer through the wrapper.
//!
//! Only one worker talks to the optimizer at a time. The sampler is handed
//! to the worker that became free first in simulated time, and results are
//! told to the optimizer only once their simulated finish time has passed at
//! the moment of the ask. Sampling overheads are taken from the optimizer
//! when it declares them, so the run is independent of thread scheduling.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Instant;

use super::{NowSource, Objective, Wrapper, WrapperConfig};
use crate::error::{Error, Result};
use crate::scs::{Ask, AskTellOptimizer};
use crate::sim::{Config, EvalArgs, Objectives, TrajectoryRecord};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    /// Free since simulated time `t`, waiting for the sampler.
    Queued(f64),
    /// Evaluation ends at `t`.
    Evaluating(f64),
    /// The optimizer asked to wait at simulated time `v`.
    Parked(f64),
    Done,
}

#[derive(Clone, Debug)]
struct Finished {
    finish: f64,
    worker: usize,
    config: Config,
    args: EvalArgs,
    objectives: Objectives,
    runtime: f64,
}

struct Turnstile {
    slots: Vec<Slot>,
    sampler_busy: bool,
    /// Mirror of the global sampling clock.
    now: f64,
    untold: Vec<Finished>,
    finishes: Vec<f64>,
    n_asked: usize,
    error: Option<Error>,
}

impl Turnstile {
    /// Next result time strictly after `v`, among finished and running evaluations.
    fn wake_time(&self, v: f64) -> f64 {
        let running = self.slots.iter().filter_map(|s| match s {
            Slot::Evaluating(t) => Some(*t),
            _ => None,
        });
        running
            .chain(self.finishes.iter().copied())
            .filter(|&t| t > v)
            .fold(f64::INFINITY, f64::min)
    }

    fn key(&self, p: usize) -> f64 {
        match self.slots[p] {
            Slot::Queued(t) | Slot::Evaluating(t) => t,
            Slot::Parked(v) => self.wake_time(v),
            Slot::Done => f64::INFINITY,
        }
    }

    fn can_reserve(&self, p: usize) -> bool {
        if self.sampler_busy || !matches!(self.slots[p], Slot::Queued(_) | Slot::Parked(_)) {
            return false;
        }
        let own = (self.key(p), p);
        own.0.is_finite()
            && (0..self.slots.len())
                .filter(|&k| k != p && self.slots[k] != Slot::Done)
                .all(|k| own < (self.key(k), k))
    }

    fn stuck(&self) -> bool {
        !self.sampler_busy
            && self
                .slots
                .iter()
                .all(|s| matches!(s, Slot::Parked(_) | Slot::Done))
            && (0..self.slots.len()).all(|k| !self.key(k).is_finite())
            && self.slots.iter().any(|s| matches!(s, Slot::Parked(_)))
    }

    fn running_until(&self, t: f64) -> bool {
        self.slots
            .iter()
            .any(|s| matches!(s, Slot::Evaluating(e) if *e <= t))
    }
}

struct Shared<'a> {
    state: Mutex<Turnstile>,
    cv: Condvar,
    optimizer: Mutex<&'a mut dyn AskTellOptimizer>,
    abort: AtomicBool,
}

impl Shared<'_> {
    fn lock(&self) -> MutexGuard<'_, Turnstile> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn fail(&self, e: Error) {
        let mut st = self.lock();
        if st.error.is_none() {
            st.error = Some(e);
        }
        self.abort.store(true, Ordering::SeqCst);
        self.cv.notify_all();
    }

    /// Blocks until no evaluation ending at or before `t` is still running.
    fn settle(&self, t: f64) -> Result<()> {
        let mut st = self.lock();
        while st.running_until(t) {
            if self.abort.load(Ordering::SeqCst) {
                return Err(Error::Contract("run aborted".into()));
            }
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        Ok(())
    }
}

/// Options for [`run_mcs`].
#[derive(Clone, Debug)]
pub struct McsOptions {
    /// When the optimizer does not declare an overhead, charge the measured
    /// duration of `ask` instead of zero.
    pub measure_overhead: bool,
}

impl Default for McsOptions {
    fn default() -> Self {
        Self {
            measure_overhead: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct McsOutcome {
    /// Records in the order they were appended to the result log.
    pub trajectory: Vec<TrajectoryRecord>,
    pub wall_seconds: f64,
    pub dir: PathBuf,
}

/// Runs `cfg.n_workers` threads, each driving its own wrapper, against one
/// shared optimizer. At most `cfg.n_evals` queries are asked.
pub fn run_mcs(
    optimizer: &mut dyn AskTellOptimizer,
    objective: Arc<dyn Objective>,
    cfg: WrapperConfig,
    dir: impl Into<PathBuf>,
    options: &McsOptions,
) -> Result<McsOutcome> {
    let dir = dir.into();
    let started = Instant::now();
    let pool: Vec<Wrapper> = super::make_worker_pool(objective, cfg.clone(), &dir)?
        .into_iter()
        .map(|w| w.with_now_source(NowSource::Horizon))
        .collect();
    let store = pool[0].store().clone();
    let shared = Shared {
        state: Mutex::new(Turnstile {
            slots: vec![Slot::Queued(0.0); cfg.n_workers],
            sampler_busy: false,
            now: 0.0,
            untold: Vec::new(),
            finishes: Vec::new(),
            n_asked: 0,
            error: None,
        }),
        cv: Condvar::new(),
        optimizer: Mutex::new(optimizer),
        abort: AtomicBool::new(false),
    };
    std::thread::scope(|scope| {
        for wrapper in pool {
            let shared = &shared;
            let cfg = &cfg;
            scope.spawn(move || {
                if let Err(e) = worker_loop(wrapper, shared, cfg, options) {
                    shared.fail(e);
                }
            });
        }
    });
    if let Some(e) = shared.state.into_inner().unwrap_or_else(|e| e.into_inner()).error {
        return Err(e);
    }
    Ok(McsOutcome {
        trajectory: store.read_trajectory()?,
        wall_seconds: started.elapsed().as_secs_f64(),
        dir,
    })
}

fn worker_loop(mut wrapper: Wrapper, shared: &Shared<'_>, cfg: &WrapperConfig, options: &McsOptions) -> Result<()> {
    let p = wrapper.worker_index()?;
    loop {
        let (was_parked, key, v) = {
            let mut st = shared.lock();
            loop {
                if shared.abort.load(Ordering::SeqCst) {
                    return Ok(());
                }
                if st.slots[p] == Slot::Done {
                    return Ok(());
                }
                if st.can_reserve(p) {
                    break;
                }
                if st.stuck() {
                    return Err(Error::Contract(
                        "optimizer asked every worker to wait with nothing in flight".into(),
                    ));
                }
                st = shared.cv.wait(st).unwrap_or_else(|e| e.into_inner());
            }
            st.sampler_busy = true;
            let key = st.key(p);
            (matches!(st.slots[p], Slot::Parked(_)), key, st.now.max(key))
        };
        if was_parked {
            wrapper.resume(key)?;
        }
        wrapper.store().raise_horizon(v)?;
        shared.settle(v)?;

        let (to_tell, budget_left) = {
            let mut st = shared.lock();
            let (mut tell, keep): (Vec<_>, Vec<_>) =
                std::mem::take(&mut st.untold).into_iter().partition(|r| r.finish <= v);
            st.untold = keep;
            tell.sort_by(|a, b| a.finish.total_cmp(&b.finish).then(a.worker.cmp(&b.worker)));
            (tell, st.n_asked < cfg.n_evals)
        };
        let mut opt = shared.optimizer.lock().unwrap_or_else(|e| e.into_inner());
        for r in &to_tell {
            opt.tell(&r.config, &r.args, &r.objectives, r.runtime)?;
        }
        let asked_at = Instant::now();
        let ask = if budget_left { opt.ask()? } else { Ask::Finished };
        let ask_seconds = asked_at.elapsed().as_secs_f64();
        drop(opt);

        let suggestion = match ask {
            Ask::Finished => {
                wrapper.retire()?;
                let mut st = shared.lock();
                st.slots[p] = Slot::Done;
                st.sampler_busy = false;
                shared.cv.notify_all();
                return Ok(());
            }
            Ask::Wait => {
                wrapper.park()?;
                let mut st = shared.lock();
                st.slots[p] = Slot::Parked(v);
                st.sampler_busy = false;
                shared.cv.notify_all();
                continue;
            }
            Ask::Suggest(s) => s,
        };
        shared.lock().n_asked += 1;
        let overhead = suggestion
            .overhead
            .unwrap_or(if options.measure_overhead { ask_seconds } else { 0.0 });
        wrapper.store().raise_horizon(v + overhead)?;
        // Restart states registered before this sampling ended must be visible.
        shared.settle(key + overhead)?;

        let pending = wrapper.submit(suggestion.config, suggestion.args, Some(overhead))?;
        {
            let mut st = shared.lock();
            st.now = pending.sample_end;
            st.slots[p] = Slot::Evaluating(pending.cumtime);
            st.sampler_busy = false;
            shared.cv.notify_all();
        }
        let returned = wrapper.wait(&pending, Some(&shared.abort))?;
        wrapper.finish(&pending, &returned)?;
        if let Some(msg) = &pending.failure {
            return Err(Error::Objective(msg.clone()));
        }
        let mut st = shared.lock();
        st.finishes.push(returned.cumtime);
        st.untold.push(Finished {
            finish: returned.cumtime,
            worker: p,
            config: returned.config,
            args: returned.args,
            objectives: returned.objectives,
            runtime: returned.runtime,
        });
        st.slots[p] = Slot::Queued(returned.cumtime);
        shared.cv.notify_all();
    }
}

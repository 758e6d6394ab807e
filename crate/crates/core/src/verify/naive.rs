//! The naive simulation: workers really sleep for every runtime, scaled by
//! `kappa`, and the trajectory is read off the wall clock.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::scs::{Ask, AskTellOptimizer};
use crate::sim::{calibrate_runtime, config_key, TrajectoryRecord};
use crate::wrapper::{check_continual_request, split_output, Objective, WrapperConfig};

#[derive(Clone, Debug)]
pub struct NaiveOutcome {
    /// Records in the order they finished in real time, with times divided by `kappa`.
    pub trajectory: Vec<TrajectoryRecord>,
    pub wall_seconds: f64,
    /// Largest real delay between an evaluation's deadline and its
    /// publication, in seconds.
    pub max_lateness: f64,
    pub kappa: f64,
}

struct Cached {
    fidel: f64,
    raw_runtime: f64,
}

struct State {
    queue: VecDeque<usize>,
    busy: bool,
    running: usize,
    results: Vec<TrajectoryRecord>,
    told: usize,
    asked: usize,
    cache: BTreeMap<String, Vec<Cached>>,
    max_lateness: f64,
    error: Option<Error>,
}

struct Shared<'a> {
    state: Mutex<State>,
    cv: Condvar,
    optimizer: Mutex<&'a mut dyn AskTellOptimizer>,
    objective: &'a dyn Objective,
    abort: AtomicBool,
    origin: Instant,
    kappa: f64,
}

impl Shared<'_> {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn wait<'g>(&self, guard: MutexGuard<'g, State>) -> MutexGuard<'g, State> {
        self.cv
            .wait_timeout(guard, Duration::from_millis(50))
            .unwrap_or_else(|e| e.into_inner())
            .0
    }

    fn since_origin(&self, t: Instant) -> f64 {
        t.duration_since(self.origin).as_secs_f64() / self.kappa
    }
}

/// Runs `optimizer` on `cfg.n_workers` threads that sleep `kappa * runtime`
/// per evaluation. Workers queue for the optimizer in the order they become
/// free; every result published so far is told before each ask.
pub fn naive_run(
    optimizer: &mut dyn AskTellOptimizer,
    objective: &dyn Objective,
    cfg: &WrapperConfig,
    kappa: f64,
) -> Result<NaiveOutcome> {
    cfg.validate()?;
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::Config(format!("kappa must lie in (0, 1], got {kappa}")));
    }
    let shared = Shared {
        state: Mutex::new(State {
            queue: VecDeque::new(),
            busy: false,
            running: 0,
            results: Vec::new(),
            told: 0,
            asked: 0,
            cache: BTreeMap::new(),
            max_lateness: 0.0,
            error: None,
        }),
        cv: Condvar::new(),
        optimizer: Mutex::new(optimizer),
        objective,
        abort: AtomicBool::new(false),
        origin: Instant::now(),
        kappa,
    };
    {
        // Workers start in index order.
        let mut st = shared.lock();
        st.queue.extend(0..cfg.n_workers);
    }
    std::thread::scope(|scope| {
        for p in 0..cfg.n_workers {
            let shared = &shared;
            scope.spawn(move || {
                if let Err(e) = worker(p, shared, cfg) {
                    let mut st = shared.lock();
                    st.error.get_or_insert(e);
                    shared.abort.store(true, Ordering::SeqCst);
                    shared.cv.notify_all();
                }
            });
        }
    });
    let wall_seconds = shared.origin.elapsed().as_secs_f64();
    let st = shared.state.into_inner().unwrap_or_else(|e| e.into_inner());
    if let Some(e) = st.error {
        return Err(e);
    }
    Ok(NaiveOutcome {
        trajectory: st.results,
        wall_seconds,
        max_lateness: st.max_lateness,
        kappa,
    })
}

fn worker(p: usize, shared: &Shared<'_>, cfg: &WrapperConfig) -> Result<()> {
    let mut first = true;
    loop {
        let to_tell = {
            let mut st = shared.lock();
            if !first {
                st.queue.push_back(p);
            }
            first = false;
            while st.busy || st.queue.front() != Some(&p) {
                if shared.abort.load(Ordering::SeqCst) {
                    return Ok(());
                }
                st = shared.wait(st);
            }
            st.queue.pop_front();
            st.busy = true;
            let told = st.told;
            st.told = st.results.len();
            st.results[told..].to_vec()
        };

        let mut opt = shared.optimizer.lock().unwrap_or_else(|e| e.into_inner());
        for r in &to_tell {
            let config = r.config.as_ref().expect("naive records keep configs");
            opt.tell(config, r.args.as_ref().expect("naive records keep args"), &r.objectives, r.runtime)?;
        }
        let budget_left = shared.lock().asked < cfg.n_evals;
        let ask_start = Instant::now();
        let ask = if budget_left { opt.ask()? } else { Ask::Finished };
        let sample_end = Instant::now();
        drop(opt);

        let suggestion = match ask {
            Ask::Finished => {
                let mut st = shared.lock();
                st.busy = false;
                shared.cv.notify_all();
                return Ok(());
            }
            Ask::Wait => {
                let mut st = shared.lock();
                st.busy = false;
                shared.cv.notify_all();
                let seen = st.results.len();
                while st.results.len() == seen {
                    if shared.abort.load(Ordering::SeqCst) {
                        return Ok(());
                    }
                    if st.running == 0 && !st.busy && st.queue.is_empty() {
                        return Err(Error::Contract(
                            "optimizer asked every worker to wait with nothing in flight".into(),
                        ));
                    }
                    st = shared.wait(st);
                }
                continue;
            }
            Ask::Suggest(s) => s,
        };

        let key = config_key(&suggestion.config, suggestion.args.seed);
        let mut fidel = None;
        let prior = {
            let mut st = shared.lock();
            st.asked += 1;
            st.running += 1;
            st.busy = false;
            shared.cv.notify_all();
            let mut prior = 0.0;
            if cfg.continual() {
                check_continual_request(cfg, &suggestion.args)?;
                let f = suggestion.args.fidels[&cfg.fidel_keys[0]];
                fidel = Some(f);
                if let Some(list) = st.cache.get_mut(&key) {
                    let best = list
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.fidel < f)
                        .max_by(|a, b| a.1.fidel.total_cmp(&b.1.fidel))
                        .map(|(i, _)| i);
                    if let Some(i) = best {
                        prior = list.remove(i).raw_runtime;
                    }
                }
            }
            prior
        };

        let output = shared
            .objective
            .call(&suggestion.config, &suggestion.args.fidels, suggestion.args.seed)?;
        let (objectives, raw) = split_output(&output, cfg)?;
        let runtime = calibrate_runtime(raw, prior).runtime;
        let deadline = sample_end + Duration::from_secs_f64(shared.kappa * runtime);
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
        let woke = Instant::now();

        let mut st = shared.lock();
        st.running -= 1;
        let late = woke.saturating_duration_since(deadline).as_secs_f64();
        st.max_lateness = st.max_lateness.max(late);
        if let Some(f) = fidel {
            st.cache.entry(key).or_default().push(Cached { fidel: f, raw_runtime: raw });
        }
        let order_index = st.results.len() + 1;
        st.results.push(TrajectoryRecord {
            order_index,
            finish_cumtime: shared.since_origin(woke),
            objectives,
            worker_index: p,
            runtime,
            sample_overhead: sample_end.duration_since(ask_start).as_secs_f64() / shared.kappa,
            config: Some(suggestion.config),
            args: Some(suggestion.args),
        });
        shared.cv.notify_all();
    }
}

/// Smallest positive gap between finish times.
pub fn min_finish_gap(records: &[TrajectoryRecord]) -> f64 {
    let mut t: Vec<f64> = records.iter().map(|r| r.finish_cumtime).collect();
    t.sort_by(f64::total_cmp);
    t.windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Smallest `kappa` at which a naive run resolves every finish gap of the
/// reference with a margin of 50 times the per-call overhead (seconds).
pub fn kappa_threshold(reference: &[TrajectoryRecord], overhead: f64) -> f64 {
    50.0 * overhead / min_finish_gap(reference)
}

/// Measures the typical real delay of waking a sleeping thread, in seconds.
pub fn measure_call_overhead(samples: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut total = 0.0;
    for _ in 0..samples.max(1) {
        let target = Duration::from_micros(500);
        let t0 = Instant::now();
        std::thread::sleep(target);
        let over = (t0.elapsed().saturating_sub(target)).as_secs_f64();
        worst = worst.max(over);
        total += over;
    }
    (total / samples.max(1) as f64).max(worst / 2.0)
}

//! The multi-core simulator: each worker evaluates its query instantly,
//! publishes the simulated time at which the evaluation would have ended,
//! and holds the result back until no peer can still produce an earlier one.

pub mod driver;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{
    calibrate_runtime, config_key, validate_state, Config, EvalArgs, EvalRequest, Fidels,
    IntermediateState, Objectives,
};
use crate::store::{wall_now, LaunchMode, LogEntry, Phase, Snapshot, Store};

/// A zero-cost objective: returns a map holding the runtime and every
/// objective value.
pub trait Objective: Send + Sync {
    fn call(&self, config: &Config, fidels: &Fidels, seed: Option<u64>) -> Result<Objectives>;
}

impl<F> Objective for F
where
    F: Fn(&Config, &Fidels, Option<u64>) -> Result<Objectives> + Send + Sync,
{
    fn call(&self, config: &Config, fidels: &Fidels, seed: Option<u64>) -> Result<Objectives> {
        self(config, fidels, seed)
    }
}

/// Wrapper arguments. Field names follow the conventional argument names so
/// manifests and flags can use them verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrapperConfig {
    pub save_dir_name: String,
    pub n_workers: usize,
    pub n_evals: usize,
    /// Upper bound on results the store accepts; defaults to `n_evals + n_workers`.
    pub n_actual_evals_in_opt: Option<usize>,
    /// Enables continual evaluation up to this fidelity.
    pub continual_max_fidel: Option<f64>,
    pub runtime_key: String,
    pub obj_keys: Vec<String>,
    pub fidel_keys: Vec<String>,
    pub seed: Option<u64>,
    pub max_waiting_time: f64,
    pub check_interval_time: f64,
    pub store_config: bool,
    pub launch_multiple_wrappers_from_user_side: bool,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        Self {
            save_dir_name: "default".into(),
            n_workers: 4,
            n_evals: 100,
            n_actual_evals_in_opt: None,
            continual_max_fidel: None,
            runtime_key: "runtime".into(),
            obj_keys: vec!["loss".into()],
            fidel_keys: Vec::new(),
            seed: None,
            max_waiting_time: 120.0,
            check_interval_time: 0.004,
            store_config: true,
            launch_multiple_wrappers_from_user_side: false,
        }
    }
}

impl WrapperConfig {
    pub fn n_actual_evals(&self) -> usize {
        self.n_actual_evals_in_opt.unwrap_or(self.n_evals + self.n_workers)
    }

    pub fn continual(&self) -> bool {
        self.continual_max_fidel.is_some()
    }

    pub fn launch_mode(&self) -> LaunchMode {
        if self.launch_multiple_wrappers_from_user_side {
            LaunchMode::UserSide
        } else {
            LaunchMode::InProcess
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_workers == 0 {
            return Err(Error::Config("n_workers must be at least 1".into()));
        }
        if self.n_evals == 0 {
            return Err(Error::Config("n_evals must be at least 1".into()));
        }
        if self.n_actual_evals() < self.n_evals + self.n_workers {
            return Err(Error::Config(format!(
                "n_actual_evals_in_opt ({}) must be at least n_evals + n_workers ({})",
                self.n_actual_evals(),
                self.n_evals + self.n_workers
            )));
        }
        if !(self.check_interval_time > 0.0) {
            return Err(Error::Config("check_interval_time must be positive".into()));
        }
        if !(self.max_waiting_time > self.check_interval_time) {
            return Err(Error::Config(
                "max_waiting_time must exceed check_interval_time".into(),
            ));
        }
        if self.obj_keys.is_empty() {
            return Err(Error::Config("obj_keys must name at least one objective".into()));
        }
        if self.continual() && self.fidel_keys.len() != 1 {
            return Err(Error::Config(format!(
                "continual evaluation needs exactly one fidelity key, got {}",
                self.fidel_keys.len()
            )));
        }
        Ok(())
    }
}

/// Splits an objective's output into the tracked objectives and the runtime.
pub fn split_output(output: &Objectives, cfg: &WrapperConfig) -> Result<(Objectives, f64)> {
    let runtime = *output
        .get(&cfg.runtime_key)
        .ok_or_else(|| Error::Objective(format!("output lacks runtime key {:?}", cfg.runtime_key)))?;
    if !(runtime >= 0.0 && runtime.is_finite()) {
        return Err(Error::Objective(format!("runtime must be finite and nonnegative, got {runtime}")));
    }
    let objectives = cfg
        .obj_keys
        .iter()
        .map(|k| {
            output
                .get(k)
                .map(|v| (k.clone(), *v))
                .ok_or_else(|| Error::Objective(format!("output lacks objective {k:?}")))
        })
        .collect::<Result<_>>()?;
    Ok((objectives, runtime))
}

/// Index of the valid cached state with the highest fidelity, if any.
pub fn select_state(
    states: &[IntermediateState],
    request: &EvalRequest,
    worker_cumtime: f64,
) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in states.iter().enumerate() {
        if !validate_state(s, request, worker_cumtime)? {
            continue;
        }
        let fidel = s.args.single_fidel().map_or(0.0, |(_, v)| v);
        if best.is_none_or(|(_, b)| fidel > b) {
            best = Some((i, fidel));
        }
    }
    Ok(best.map(|(i, _)| i))
}

/// Checks the requested fidelity against the continual ceiling.
pub fn check_continual_request(cfg: &WrapperConfig, args: &EvalArgs) -> Result<()> {
    let Some(max) = cfg.continual_max_fidel else {
        return Ok(());
    };
    let key = &cfg.fidel_keys[0];
    match args.fidels.get(key) {
        Some(&v) if v > 0.0 && v <= max => Ok(()),
        Some(&v) => Err(Error::Domain(format!("{key}={v} outside (0, {max}]"))),
        None => Err(Error::Config(format!("continual request lacks fidelity {key:?}"))),
    }
}

/// Where a waiting worker gets the current simulated time from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NowSource {
    /// Real elapsed time since the sampling worker was freed.
    Wall,
    /// The optimizer-side horizon published in the store's clock. Used when
    /// sampling overheads are declared rather than measured.
    Horizon,
}

/// An evaluation that has been computed and published but not yet returned.
#[derive(Clone, Debug)]
pub struct Pending {
    pub request: EvalRequest,
    pub objectives: Objectives,
    pub raw_runtime: f64,
    pub runtime: f64,
    /// Simulated time at which the sampling for this query ended.
    pub sample_end: f64,
    /// Simulated time at which the evaluation ends.
    pub cumtime: f64,
    /// Set when the restart calibration had to be clamped.
    pub clamped: bool,
    /// The objective failed; the result is recorded as infinite.
    pub failure: Option<String>,
}

/// Outcome of one full evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Returned {
    pub worker: usize,
    pub objectives: Objectives,
    pub cumtime: f64,
    pub runtime: f64,
    pub sample_overhead: f64,
    pub config: Config,
    pub args: EvalArgs,
    /// The wait timed out and the objectives were replaced by infinity.
    pub timed_out: bool,
}

/// One worker's view of a shared simulation.
pub struct Wrapper {
    cfg: Arc<WrapperConfig>,
    store: Store,
    objective: Arc<dyn Objective>,
    unit_id: Option<String>,
    worker: Option<usize>,
    last_return: Option<f64>,
    now_source: NowSource,
}

fn thread_unit_id() -> String {
    format!("{}:{:?}", std::process::id(), std::thread::current().id())
}

impl Wrapper {
    fn new(cfg: Arc<WrapperConfig>, store: Store, objective: Arc<dyn Objective>) -> Self {
        Self {
            cfg,
            store,
            objective,
            unit_id: None,
            worker: None,
            last_return: None,
            now_source: NowSource::Wall,
        }
    }

    /// Joins (or creates) the run directory from a separate process.
    /// Registration is keyed by process id.
    pub fn join_user_side(
        objective: Arc<dyn Objective>,
        cfg: WrapperConfig,
        dir: impl Into<std::path::PathBuf>,
    ) -> Result<Self> {
        cfg.validate()?;
        if !cfg.launch_multiple_wrappers_from_user_side {
            return Err(Error::Config(
                "joining from a separate process needs launch_multiple_wrappers_from_user_side".into(),
            ));
        }
        let store = Store::open(dir, cfg.n_workers, LaunchMode::UserSide)?;
        let mut w = Self::new(Arc::new(cfg), store, objective);
        w.unit_id = Some(std::process::id().to_string());
        Ok(w)
    }

    pub fn with_now_source(mut self, source: NowSource) -> Self {
        self.now_source = source;
        self
    }

    pub fn with_unit_id(mut self, id: impl Into<String>) -> Self {
        self.unit_id = Some(id.into());
        self
    }

    pub fn config(&self) -> &WrapperConfig {
        &self.cfg
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Worker index, registering the calling execution unit on first use.
    pub fn worker_index(&mut self) -> Result<usize> {
        if let Some(p) = self.worker {
            return Ok(p);
        }
        let id = self.unit_id.clone().unwrap_or_else(thread_unit_id);
        let p = self.store.register_worker(&id)?;
        self.worker = Some(p);
        Ok(p)
    }

    /// Runs one query end to end and returns its objectives.
    pub fn evaluate(&mut self, config: Config, args: EvalArgs) -> Result<Objectives> {
        let pending = self.submit(config, args, None)?;
        let failure = pending.failure.clone();
        let returned = self.wait(&pending, None)?;
        self.finish(&pending, &returned)?;
        match failure {
            Some(msg) => Err(Error::Objective(msg)),
            None => Ok(returned.objectives),
        }
    }

    /// Looks up a restart state, queries the objective, calibrates the
    /// runtime, advances the sampling clock and publishes the new cumtime.
    ///
    /// `overhead` is the sampling time of this query; when `None` it is the
    /// real time since this worker last returned.
    pub fn submit(&mut self, config: Config, args: EvalArgs, overhead: Option<f64>) -> Result<Pending> {
        let p = self.worker_index()?;
        let sample_overhead = match overhead {
            Some(t) if t >= 0.0 && t.is_finite() => t,
            Some(t) => return Err(Error::Contract(format!("sample overhead must be nonnegative, got {t}"))),
            None => {
                let since = match self.last_return {
                    Some(t) => t,
                    None => self.store.read_freed(p)?,
                };
                (wall_now() - since).max(0.0)
            }
        };
        let request = EvalRequest {
            config,
            args,
            sample_overhead,
        };
        let worker_cumtime = self.store.read_cumtimes()?[p];

        let mut prior = 0.0;
        if self.cfg.continual() {
            check_continual_request(&self.cfg, &request.args)?;
            let key = config_key(&request.config, request.args.seed);
            let taken = self
                .store
                .take_state(&key, |states| select_state(states, &request, worker_cumtime))?;
            if let Some(state) = taken {
                prior = state.runtime_so_far;
            }
        }

        let (objectives, raw_runtime, failure) =
            match self
                .objective
                .call(&request.config, &request.args.fidels, request.args.seed)
                .and_then(|out| split_output(&out, &self.cfg))
            {
                Ok((objectives, runtime)) => (objectives, runtime, None),
                Err(e) => (self.infinite_objectives(), 0.0, Some(e.to_string())),
            };
        let calibration = calibrate_runtime(raw_runtime, prior);
        if calibration.clamped {
            log::warn!(
                "worker {p}: runtime {raw_runtime} is below the restart state's {prior}; charging zero"
            );
        }
        let sample_end = self.store.advance_clock(worker_cumtime, sample_overhead)?;
        let cumtime = sample_end + calibration.runtime;
        self.store.set_phase(p, Phase::Evaluating)?;
        self.store.update_cumtime(p, cumtime)?;
        Ok(Pending {
            request,
            objectives,
            raw_runtime,
            runtime: calibration.runtime,
            sample_end,
            cumtime,
            clamped: calibration.clamped,
            failure,
        })
    }

    fn infinite_objectives(&self) -> Objectives {
        self.cfg
            .obj_keys
            .iter()
            .map(|k| (k.clone(), f64::INFINITY))
            .collect()
    }

    /// Whether worker `p` with clock `own` may hand its result back given a
    /// store snapshot.
    pub fn returnable(&self, p: usize, own: f64, snap: &Snapshot, freed: Option<&[f64]>) -> bool {
        let phases = &snap.phases;
        let cum = &snap.cumtimes;
        // Peers that will also return must go first when they end earlier.
        let earlier_peer = (0..cum.len()).any(|k| {
            k != p && phases[k] == Phase::Evaluating && (cum[k], k) < (own, p)
        });
        if earlier_peer {
            return false;
        }
        let active: Vec<usize> = (0..cum.len())
            .filter(|&k| k == p || phases[k].is_active())
            .collect();
        let min = active.iter().map(|&k| cum[k]).fold(f64::INFINITY, f64::min);
        let holder = active
            .iter()
            .copied()
            .filter(|&k| cum[k] == min)
            .min_by_key(|&k| (phases[k] != Phase::Sampling, k));
        let t_now = match holder {
            Some(h) if phases[h] == Phase::Sampling => match self.now_source {
                NowSource::Wall => freed.map_or(0.0, |f| wall_now() - f[h]),
                NowSource::Horizon => snap.clock.horizon - cum[h],
            },
            _ => 0.0,
        }
        .max(0.0);
        let others: Vec<f64> = active.iter().map(|&k| cum[k]).collect();
        crate::sim::may_return(own, &others, t_now)
    }

    /// Polls the store until this worker may return. Gives up with infinite
    /// objectives after `max_waiting_time` without any change in the store,
    /// or as soon as `abort` is raised.
    pub fn wait(&mut self, pending: &Pending, abort: Option<&AtomicBool>) -> Result<Returned> {
        let p = self.worker_index()?;
        let interval = Duration::from_secs_f64(self.cfg.check_interval_time);
        let mut last_snap: Option<Snapshot> = None;
        let mut last_change = Instant::now();
        let mut returned = Returned {
            worker: p,
            objectives: pending.objectives.clone(),
            cumtime: pending.cumtime,
            runtime: pending.runtime,
            sample_overhead: pending.request.sample_overhead,
            config: pending.request.config.clone(),
            args: pending.request.args.clone(),
            timed_out: false,
        };
        loop {
            if abort.is_some_and(|a| a.load(Ordering::Relaxed)) {
                return Err(Error::Contract("run aborted".into()));
            }
            let snap = self.store.snapshot()?;
            let freed = match self.now_source {
                NowSource::Wall => Some(self.store.read_freed_all()?),
                NowSource::Horizon => None,
            };
            if self.returnable(p, pending.cumtime, &snap, freed.as_deref()) {
                return Ok(returned);
            }
            if last_snap.as_ref() != Some(&snap) {
                last_snap = Some(snap);
                last_change = Instant::now();
            } else if last_change.elapsed().as_secs_f64() > self.cfg.max_waiting_time {
                log::warn!("worker {p}: no progress for {} s, returning inf", self.cfg.max_waiting_time);
                returned.objectives = self.infinite_objectives();
                returned.runtime = 0.0;
                returned.timed_out = true;
                return Ok(returned);
            }
            std::thread::sleep(interval);
        }
    }

    /// Records the restart state, appends the result and frees the worker.
    pub fn finish(&mut self, pending: &Pending, returned: &Returned) -> Result<LogEntry> {
        let p = self.worker_index()?;
        if self.cfg.continual() && pending.failure.is_none() && !returned.timed_out {
            let key = config_key(&pending.request.config, pending.request.args.seed);
            self.store.put_state(
                &key,
                IntermediateState {
                    runtime_so_far: pending.raw_runtime,
                    registered_cumtime: pending.cumtime,
                    args: pending.request.args.clone(),
                },
            )?;
        }
        let entry = LogEntry {
            cumtime: returned.cumtime,
            objectives: returned.objectives.clone(),
            worker: p,
            runtime: returned.runtime,
            overhead: returned.sample_overhead,
            config: self.cfg.store_config.then(|| returned.config.clone()),
            fidels: self.cfg.store_config.then(|| returned.args.fidels.clone()),
            seed: if self.cfg.store_config { returned.args.seed } else { None },
        };
        self.store.append_result_within(&entry, self.cfg.n_actual_evals())?;
        let now = wall_now();
        self.store.record_freed(p, now)?;
        self.store.set_phase(p, Phase::Sampling)?;
        self.last_return = Some(now);
        Ok(entry)
    }

    /// Marks the worker as waiting on the optimizer rather than competing.
    pub fn park(&mut self) -> Result<()> {
        let p = self.worker_index()?;
        self.store.set_phase(p, Phase::Idle)
    }

    /// Brings a parked worker back at simulated time `at`.
    pub fn resume(&mut self, at: f64) -> Result<()> {
        let p = self.worker_index()?;
        self.store.update_cumtime(p, at)?;
        self.store.set_phase(p, Phase::Sampling)
    }

    pub fn retire(&mut self) -> Result<()> {
        let p = self.worker_index()?;
        self.store.set_phase(p, Phase::Done)
    }
}

/// Builds `n_workers` wrappers over one fresh run directory.
///
/// In in-process mode every wrapper registers under the id of the thread
/// that first uses it. With `launch_multiple_wrappers_from_user_side` the
/// directory is opened (not wiped) so separate processes can join it.
pub fn make_worker_pool(
    objective: Arc<dyn Objective>,
    cfg: WrapperConfig,
    dir: impl Into<std::path::PathBuf>,
) -> Result<Vec<Wrapper>> {
    cfg.validate()?;
    let dir = dir.into();
    let store = if cfg.launch_multiple_wrappers_from_user_side {
        Store::open(dir, cfg.n_workers, LaunchMode::UserSide)?
    } else {
        Store::create_fresh(dir, cfg.n_workers, LaunchMode::InProcess)?
    };
    let cfg = Arc::new(cfg);
    Ok((0..cfg.n_workers)
        .map(|_| Wrapper::new(cfg.clone(), store.clone(), objective.clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective() -> Arc<dyn Objective> {
        Arc::new(|c: &Config, _f: &Fidels, _s: Option<u64>| -> Result<Objectives> {
            Ok([
                ("loss".to_string(), c["x"]),
                ("runtime".to_string(), c["runtime"]),
            ]
            .into())
        })
    }

    fn cfg(n: usize) -> WrapperConfig {
        WrapperConfig {
            n_workers: n,
            n_evals: 10,
            check_interval_time: 0.001,
            max_waiting_time: 5.0,
            ..Default::default()
        }
    }

    fn query(x: f64, runtime: f64) -> Config {
        [("x".to_string(), x), ("runtime".to_string(), runtime)].into()
    }

    #[test]
    fn config_validation() {
        assert!(cfg(4).validate().is_ok());
        let bad = WrapperConfig {
            n_actual_evals_in_opt: Some(5),
            ..cfg(4)
        };
        assert!(bad.validate().is_err());
        let bad = WrapperConfig {
            max_waiting_time: 0.0001,
            ..cfg(4)
        };
        assert!(bad.validate().is_err());
        let bad = WrapperConfig {
            continual_max_fidel: Some(27.0),
            fidel_keys: vec!["a".into(), "b".into()],
            ..cfg(4)
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn single_worker_cumtimes_are_prefix_sums() {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = make_worker_pool(objective(), cfg(1), dir.path().join("run")).unwrap();
        let w = &mut pool[0];
        let mut expect = 0.0;
        for (i, rt) in [3.0, 1.0, 4.0].into_iter().enumerate() {
            let pending = w.submit(query(i as f64, rt), EvalArgs::default(), Some(0.5)).unwrap();
            let r = w.wait(&pending, None).unwrap();
            w.finish(&pending, &r).unwrap();
            expect += rt + 0.5;
            assert_eq!(r.cumtime, expect);
        }
        let log = w.store().read_trajectory().unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log[2].finish_cumtime, 9.5);
    }

    #[test]
    fn two_workers_return_in_simulated_order() {
        let dir = tempfile::tempdir().unwrap();
        let pool = make_worker_pool(objective(), cfg(2), dir.path().join("run")).unwrap();
        let store = pool[0].store().clone();
        let handles: Vec<_> = pool
            .into_iter()
            .zip([(1.0, 200.0), (2.0, 100.0)])
            .enumerate()
            .map(|(i, (mut w, (x, rt)))| {
                std::thread::spawn(move || {
                    // Stagger submission so worker indices follow spawn order.
                    std::thread::sleep(Duration::from_millis(30 * i as u64));
                    let p = w.submit(query(x, rt), EvalArgs::default(), Some(0.0)).unwrap();
                    let r = w.wait(&p, None).unwrap();
                    w.finish(&p, &r).unwrap();
                    w.retire().unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let log = store.read_trajectory().unwrap();
        let xs: Vec<f64> = log.iter().map(|r| r.config.as_ref().unwrap()["x"]).collect();
        assert_eq!(xs, vec![2.0, 1.0]);
        assert_eq!(
            log.iter().map(|r| r.finish_cumtime).collect::<Vec<_>>(),
            vec![100.0, 200.0]
        );
    }

    #[test]
    fn continual_restart_is_calibrated() {
        let dir = tempfile::tempdir().unwrap();
        let c = WrapperConfig {
            continual_max_fidel: Some(100.0),
            fidel_keys: vec!["epoch".into()],
            ..cfg(1)
        };
        let obj: Arc<dyn Objective> = Arc::new(|_c: &Config, f: &Fidels, _s: Option<u64>| -> Result<Objectives> {
            let e = f["epoch"];
            Ok([("loss".to_string(), 1.0 / e), ("runtime".to_string(), e)].into())
        });
        let mut pool = make_worker_pool(obj, c, dir.path().join("run")).unwrap();
        let w = &mut pool[0];
        let config: Config = [("x".to_string(), 0.5)].into();
        let at = |e: f64| EvalArgs::new([("epoch".to_string(), e)].into(), None);
        let p = w.submit(config.clone(), at(30.0), Some(0.0)).unwrap();
        assert_eq!(p.runtime, 30.0);
        let r = w.wait(&p, None).unwrap();
        w.finish(&p, &r).unwrap();
        let p = w.submit(config.clone(), at(100.0), Some(0.0)).unwrap();
        assert_eq!(p.raw_runtime, 100.0);
        assert_eq!(p.runtime, 70.0);
        let r = w.wait(&p, None).unwrap();
        w.finish(&p, &r).unwrap();
        let key = config_key(&config, None);
        let states = w.store().fetch_state(&key).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].runtime_so_far, 100.0);
        assert_eq!(states[0].registered_cumtime, 100.0);
        assert!(w.submit(config, at(120.0), Some(0.0)).is_err());
    }

    #[test]
    fn lone_worker_with_dead_peer_times_out_to_infinity() {
        let dir = tempfile::tempdir().unwrap();
        let c = WrapperConfig {
            max_waiting_time: 0.2,
            ..cfg(2)
        };
        let mut pool = make_worker_pool(objective(), c, dir.path().join("run")).unwrap();
        let w = pool.remove(0);
        w.store().register_worker("dead peer").unwrap();
        // The peer never samples; use the horizon so real time cannot open the window.
        let mut w = w.with_now_source(NowSource::Horizon);
        let p = w.submit(query(1.0, 10.0), EvalArgs::default(), Some(0.0)).unwrap();
        let t0 = Instant::now();
        let r = w.wait(&p, None).unwrap();
        assert!(r.timed_out);
        assert!(t0.elapsed().as_secs_f64() >= 0.2);
        assert_eq!(r.objectives["loss"], f64::INFINITY);
        let entry = w.finish(&p, &r).unwrap();
        assert_eq!(entry.runtime, 0.0);
        assert_eq!(w.store().get_n_results().unwrap(), 1);
    }

    #[test]
    fn wall_window_opens_after_sampling_stall() {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = make_worker_pool(objective(), cfg(2), dir.path().join("run")).unwrap();
        let mut sampler = pool.remove(0).with_unit_id("sampler");
        let mut w = pool.remove(0).with_unit_id("waiter");
        assert_eq!(sampler.worker_index().unwrap(), 0);
        assert_eq!(w.worker_index().unwrap(), 1);
        // Worker 0 was freed just now at simulated time 0 and keeps sampling.
        sampler.store().record_freed(0, wall_now()).unwrap();
        let p = w.submit(query(1.0, 0.3), EvalArgs::default(), Some(0.0)).unwrap();
        let t0 = Instant::now();
        let r = w.wait(&p, None).unwrap();
        let waited = t0.elapsed().as_secs_f64();
        assert!(!r.timed_out);
        assert!((0.25..0.5).contains(&waited), "{waited}");
    }

    #[test]
    fn objective_failure_records_infinity_then_errors() {
        let dir = tempfile::tempdir().unwrap();
        let obj: Arc<dyn Objective> = Arc::new(|_c: &Config, _f: &Fidels, _s: Option<u64>| -> Result<Objectives> {
            Err(Error::Objective("diverged".into()))
        });
        let mut pool = make_worker_pool(obj, cfg(1), dir.path().join("run")).unwrap();
        let w = &mut pool[0];
        let err = w.evaluate(query(1.0, 1.0), EvalArgs::default()).unwrap_err();
        assert!(matches!(err, Error::Objective(_)));
        let log = w.store().read_results().unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].objectives["loss"], f64::INFINITY);
    }

    #[test]
    fn pool_threads_get_distinct_indices_and_capacity_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let pool = make_worker_pool(objective(), cfg(4), dir.path().join("run")).unwrap();
        let store = pool[0].store().clone();
        let handles: Vec<_> = pool
            .into_iter()
            .map(|mut w| std::thread::spawn(move || w.worker_index().unwrap()))
            .collect();
        let mut got: Vec<usize> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 3]);
        assert!(matches!(
            store.register_worker("fifth"),
            Err(Error::Capacity { n_workers: 4 })
        ));
    }

    #[test]
    fn mixed_launch_modes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run");
        make_worker_pool(objective(), cfg(2), &path).unwrap();
        let user = WrapperConfig {
            launch_multiple_wrappers_from_user_side: true,
            ..cfg(2)
        };
        assert!(matches!(
            Wrapper::join_user_side(objective(), user, &path),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn state_selection_prefers_highest_valid_fidelity() {
        let at = |e: f64| EvalArgs::new([("epoch".to_string(), e)].into(), None);
        let states = vec![
            IntermediateState {
                runtime_so_far: 3.0,
                registered_cumtime: 10.0,
                args: at(3.0),
            },
            IntermediateState {
                runtime_so_far: 9.0,
                registered_cumtime: 20.0,
                args: at(9.0),
            },
            IntermediateState {
                runtime_so_far: 27.0,
                registered_cumtime: 500.0,
                args: at(27.0),
            },
        ];
        let req = EvalRequest {
            config: Config::new(),
            args: at(81.0),
            sample_overhead: 0.0,
        };
        assert_eq!(select_state(&states, &req, 30.0).unwrap(), Some(1));
        assert_eq!(select_state(&states, &req, 5.0).unwrap(), None);
    }
}

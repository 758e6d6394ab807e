//! Verification protocols: return order, runtime consistency, the
//! handcrafted timelines and the runtime reduction, plus the continual and
//! noisy checks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::benchmarks::{
    generate_runtime_sequence, BenchmarkObjective, FidelityScale, Hartmann, MfBenchmark, Noisy, RuntimeDist,
    RuntimeSequence,
};
use crate::error::{Error, Result};
use crate::optimizers::{
    sequence_objective, FidelityChoice, FixedConfigSampler, HalvingSettings, RandomSearch, SamplingCost,
    SuccessiveHalving,
};
use crate::scs::{run_scs, ScsOptions};
use crate::sim::TrajectoryRecord;
use crate::verify::compare::{compare, Report};
use crate::verify::naive::{kappa_threshold, measure_call_overhead, naive_run};
use crate::verify::oracle::{oracle_sequence, oracle_simulate, OracleCost, OracleRun};
use crate::verify::timeline;
use crate::wrapper::driver::{run_mcs, McsOptions};
use crate::wrapper::{Objective, WrapperConfig};

pub const CASE1: [f64; 20] = [
    100.0, 40.0, 30.0, 20.0, 20.0, 30.0, 40.0, 20.0, 20.0, 30.0, 20.0, 40.0, 30.0, 20.0, 30.0, 20.0, 30.0, 40.0,
    30.0, 10.0,
];
pub const CASE2: [f64; 8] = [40.0, 60.0, 60.0, 50.0, 50.0, 30.0, 30.0, 30.0];
pub const CASE3: [f64; 8] = [50.0, 130.0, 80.0, 160.0, 130.0, 70.0, 20.0, 30.0];
/// Sampling coefficient of the expensive handcrafted cases.
pub const CASE_C: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct Handcrafted {
    pub name: &'static str,
    pub sequence: RuntimeSequence,
    pub cost: SamplingCost,
}

/// The three small cases with every time multiplied by `time_scale`.
pub fn handcrafted_cases(time_scale: f64) -> Vec<Handcrafted> {
    let expensive = SamplingCost::Expensive { c: CASE_C * time_scale };
    vec![
        Handcrafted {
            name: "case1",
            sequence: RuntimeSequence(CASE1.to_vec()).scaled(time_scale),
            cost: SamplingCost::Cheap,
        },
        Handcrafted {
            name: "case2",
            sequence: RuntimeSequence(CASE2.to_vec()).scaled(time_scale),
            cost: expensive,
        },
        Handcrafted {
            name: "case3",
            sequence: RuntimeSequence(CASE3.to_vec()).scaled(time_scale),
            cost: expensive,
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Order,
    Runtime,
    Handcrafted,
    Reduction,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Order, Suite::Runtime, Suite::Handcrafted, Suite::Reduction];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Order => "order",
            Suite::Runtime => "runtime",
            Suite::Handcrafted => "handcrafted",
            Suite::Reduction => "reduction",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: Vec<u64>,
    /// Evaluations per random run.
    pub n: usize,
    pub n_workers: usize,
    /// Scale `b` of the runtime distributions.
    pub b: f64,
    /// Sampling coefficient of the expensive order runs.
    pub c_order: f64,
    /// Sampling coefficient of the expensive runtime runs.
    pub c_runtime: f64,
    /// Sleep the declared sampling overheads for real.
    pub real_sleep: bool,
    pub check_interval: f64,
    /// Simulations running at once.
    pub concurrency: usize,
    pub work_dir: PathBuf,
    /// Time scale of the naive comparison; `None` skips it.
    pub kappa: Option<f64>,
    pub naive_n: usize,
    /// Time scale of the handcrafted cases.
    pub time_scale: f64,
    pub reduction_evals: usize,
}

impl SuiteOptions {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        Self {
            seeds: (0..10).collect(),
            n: 100,
            n_workers: 4,
            b: 5.0,
            c_order: 5e-2,
            c_runtime: 5e-3,
            real_sleep: true,
            check_interval: 0.02,
            concurrency: 40,
            work_dir: work_dir.into(),
            kappa: Some(0.05),
            naive_n: 30,
            time_scale: 0.01,
            reduction_evals: 200,
        }
    }

    fn wrapper_config(&self, n_workers: usize, n_evals: usize) -> WrapperConfig {
        WrapperConfig {
            n_workers,
            n_evals,
            check_interval_time: self.check_interval,
            ..Default::default()
        }
    }
}

fn cost_name(cost: SamplingCost) -> &'static str {
    match cost {
        SamplingCost::Cheap => "cheap",
        SamplingCost::Expensive { .. } => "expensive",
    }
}

pub type Job<'a, T> = Box<dyn FnOnce() -> T + Send + 'a>;

/// Runs `jobs` on at most `concurrency` threads, keeping their order.
pub fn run_parallel<T: Send>(jobs: Vec<Job<'_, T>>, concurrency: usize) -> Vec<T> {
    let n = jobs.len();
    let jobs: Vec<Mutex<Option<Job<'_, T>>>> =
        jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = jobs[i].lock().unwrap().take().expect("each job runs once");
                *results[i].lock().unwrap() = Some(job());
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.into_inner().unwrap().expect("every job ran"))
        .collect()
}

/// Multi-core simulation of the fixed-configuration sampler.
pub fn mcs_sequence(
    sequence: &RuntimeSequence,
    cost: SamplingCost,
    cfg: WrapperConfig,
    dir: &Path,
    real_sleep: bool,
) -> Result<Vec<TrajectoryRecord>> {
    let mut sampler =
        FixedConfigSampler::new(sequence.clone(), cost)?.with_sleep_scale(if real_sleep { 1.0 } else { 0.0 });
    let objective: Arc<dyn Objective> = Arc::new(sequence_objective);
    Ok(run_mcs(&mut sampler, objective, cfg, dir, &McsOptions::default())?.trajectory)
}

/// Single-core simulation of the fixed-configuration sampler.
pub fn scs_sequence(sequence: &RuntimeSequence, cost: SamplingCost, cfg: &WrapperConfig) -> Result<Vec<TrajectoryRecord>> {
    let mut sampler = FixedConfigSampler::new(sequence.clone(), cost)?.with_sleep_scale(0.0);
    Ok(run_scs(&mut sampler, &sequence_objective, cfg, &ScsOptions::default())?.trajectory)
}

fn failed(check: String, r: Result<Report>) -> Report {
    r.unwrap_or_else(|e| Report::fail(check, e.to_string()))
}

/// Return order of the multi-core simulator against the oracle for every
/// distribution, cost model and seed.
pub fn order_suite(opts: &SuiteOptions) -> Vec<Report> {
    sequence_grid(opts, opts.c_order, "order", f64::INFINITY)
}

/// Simulated finish times of both simulators against the oracle, which must
/// agree exactly, and the naive comparison when enabled.
pub fn runtime_suite(opts: &SuiteOptions) -> Vec<Report> {
    let mut reports = sequence_grid(opts, opts.c_runtime, "runtime", 0.0);
    for dist in RuntimeDist::ALL {
        for cost in [SamplingCost::Cheap, SamplingCost::Expensive { c: opts.c_runtime }] {
            for &seed in &opts.seeds {
                let check = format!("runtime/scs/{}/{}/seed{seed}", dist.as_str(), cost_name(cost));
                let r = (|| {
                    let seq = generate_runtime_sequence(dist, opts.b, opts.n, seed)?;
                    let reference = oracle_sequence(&seq, cost, opts.n_workers)?;
                    let cfg = opts.wrapper_config(opts.n_workers, seq.len());
                    Ok(compare(check.clone(), &reference.trajectory, &scs_sequence(&seq, cost, &cfg)?, 0.0))
                })();
                reports.push(failed(check, r));
            }
        }
    }
    if let Some(kappa) = opts.kappa {
        reports.push(naive_check(opts, kappa));
    }
    reports
}

fn sequence_grid(opts: &SuiteOptions, c: f64, prefix: &str, tol: f64) -> Vec<Report> {
    let mut jobs: Vec<Box<dyn FnOnce() -> Report + Send + '_>> = Vec::new();
    for dist in RuntimeDist::ALL {
        for cost in [SamplingCost::Cheap, SamplingCost::Expensive { c }] {
            for &seed in &opts.seeds {
                let check = format!("{prefix}/{}/{}/seed{seed}", dist.as_str(), cost_name(cost));
                jobs.push(Box::new(move || {
                    let dir = opts.work_dir.join(check.replace('/', "_"));
                    let r = (|| {
                        let seq = generate_runtime_sequence(dist, opts.b, opts.n, seed)?;
                        let reference = oracle_sequence(&seq, cost, opts.n_workers)?;
                        let cfg = opts.wrapper_config(opts.n_workers, seq.len());
                        let sleep = opts.real_sleep && matches!(cost, SamplingCost::Expensive { .. });
                        let test = mcs_sequence(&seq, cost, cfg, &dir, sleep)?;
                        Ok(compare(check.clone(), &reference.trajectory, &test, tol))
                    })();
                    let _ = std::fs::remove_dir_all(&dir);
                    failed(check, r)
                }));
            }
        }
    }
    run_parallel(jobs, opts.concurrency)
}

/// First seed whose reference run can be resolved by a naive run at `kappa`;
/// falls back to the seed with the widest finish gaps.
pub fn select_naive_seed(
    candidates: impl IntoIterator<Item = u64>,
    kappa: f64,
    overhead: f64,
    reference: impl Fn(u64) -> Result<Vec<TrajectoryRecord>>,
) -> Result<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for seed in candidates {
        let threshold = kappa_threshold(&reference(seed)?, overhead);
        if threshold <= kappa {
            return Ok((seed, threshold));
        }
        if best.is_none_or(|(_, t)| threshold < t) {
            best = Some((seed, threshold));
        }
    }
    best.ok_or_else(|| Error::Config("no candidate seeds".into()))
}

/// MCS against a naive run at `kappa` on the uniform cheap case.
pub fn naive_check(opts: &SuiteOptions, kappa: f64) -> Report {
    let check = format!("runtime/naive/uniform/cheap/kappa{kappa}");
    let r = (|| {
        let overhead = measure_call_overhead(20);
        let make = |seed: u64| generate_runtime_sequence(RuntimeDist::Uniform, opts.b, opts.naive_n, seed);
        let (seed, threshold) = select_naive_seed(0..1000, kappa, overhead, |s| {
            Ok(oracle_sequence(&make(s)?, SamplingCost::Cheap, opts.n_workers)?.trajectory)
        })?;
        let seq = make(seed)?;
        let cfg = opts.wrapper_config(opts.n_workers, seq.len());
        let dir = opts.work_dir.join("naive_mcs");
        let mcs = mcs_sequence(&seq, SamplingCost::Cheap, cfg.clone(), &dir, false)?;
        let _ = std::fs::remove_dir_all(&dir);
        let mut sampler = FixedConfigSampler::new(seq, SamplingCost::Cheap)?;
        let naive = naive_run(&mut sampler, &sequence_objective, &cfg, kappa)?;
        let mut report = compare(check.clone(), &naive.trajectory, &mcs, 1e-2);
        let note = format!(
            "seed {seed}, kappa threshold {threshold:.3e}, call overhead {overhead:.2e} s, lateness {:.2e} s",
            naive.max_lateness
        );
        report.detail = Some(match report.detail.take() {
            Some(d) => format!("{d}; {note}"),
            None => note,
        });
        Ok(report)
    })();
    failed(check, r)
}

#[derive(Clone, Debug)]
pub struct HandcraftedRun {
    pub case: Handcrafted,
    pub oracle: OracleRun,
    pub mcs: Vec<TrajectoryRecord>,
}

/// Runs the three cases through the oracle and the multi-core simulator.
pub fn handcrafted_runs(opts: &SuiteOptions) -> Result<Vec<HandcraftedRun>> {
    let jobs: Vec<Box<dyn FnOnce() -> Result<HandcraftedRun> + Send + '_>> = handcrafted_cases(opts.time_scale)
        .into_iter()
        .map(|case| -> Box<dyn FnOnce() -> Result<HandcraftedRun> + Send + '_> {
            Box::new(move || {
                let oracle = oracle_sequence(&case.sequence, case.cost, 4)?;
                let dir = opts.work_dir.join(case.name);
                let cfg = opts.wrapper_config(4, case.sequence.len());
                let mcs = mcs_sequence(&case.sequence, case.cost, cfg, &dir, opts.real_sleep)?;
                let _ = std::fs::remove_dir_all(&dir);
                Ok(HandcraftedRun { case, oracle, mcs })
            })
        })
        .collect();
    run_parallel(jobs, 3).into_iter().collect()
}

/// Timelines of the handcrafted cases against the oracle, with the waiting
/// properties of cases 2 and 3.
pub fn handcrafted_suite(opts: &SuiteOptions) -> Vec<Report> {
    let runs = match handcrafted_runs(opts) {
        Ok(r) => r,
        Err(e) => return vec![Report::fail("handcrafted", e.to_string())],
    };
    let mut reports = Vec::new();
    for run in &runs {
        let name = run.case.name;
        let want = timeline::events(&run.oracle.trajectory);
        let got = timeline::events(&run.mcs);
        reports.push(Report::from_bool(
            format!("handcrafted/{name}/events"),
            want == got,
            if want == got { String::new() } else { "event lists differ".into() },
        ));
        let same = timeline::intervals(&run.oracle.trajectory) == timeline::intervals(&run.mcs);
        reports.push(Report::from_bool(format!("handcrafted/{name}/intervals"), same, ""));
        let native = native_matches_records(&run.oracle);
        reports.push(Report::from_bool(format!("handcrafted/{name}/oracle_self_consistent"), native, ""));
        let waits = timeline::has_sampling_wait(&run.mcs);
        match name {
            "case2" => reports.push(Report::from_bool("handcrafted/case2/sampling_waits", waits, "")),
            "case3" => reports.push(Report::from_bool("handcrafted/case3/no_sampling_waits", !waits, "")),
            _ => {}
        }
    }
    reports
}

/// The oracle's recorded events agree with those rebuilt from its records.
fn native_matches_records(run: &OracleRun) -> bool {
    let rebuilt = timeline::events(&run.trajectory);
    let scale = run.cumtimes.iter().copied().fold(1.0, f64::max);
    rebuilt.len() == run.events.len()
        && rebuilt.iter().all(|e| {
            run.events.iter().any(|o| {
                o.kind == e.kind && o.worker == e.worker && o.sample == e.sample && (o.time - e.time).abs() <= 1e-12 * scale
            })
        })
}

#[derive(Clone, Debug)]
pub struct ReductionRun {
    pub seed: u64,
    pub simulated: f64,
    pub mcs_wall: f64,
    pub scs_wall: f64,
    pub identical: bool,
}

impl ReductionRun {
    pub fn mcs_speedup(&self) -> f64 {
        self.simulated / self.mcs_wall
    }

    pub fn scs_speedup(&self) -> f64 {
        self.simulated / self.scs_wall
    }
}

/// Random search with a uniform random fidelity on the one-hour 6D
/// Hartmann function, through the oracle, the single-core and the
/// multi-core simulator. Sampling is charged zero time so all three are
/// deterministic.
pub fn reduction_run(seed: u64, n_workers: usize, n_evals: usize, dir: &Path, check_interval: f64) -> Result<ReductionRun> {
    let bench = Hartmann::one_hour_6d();
    let space = bench.search_space();
    let objective = Arc::new(BenchmarkObjective(bench));
    let cfg = WrapperConfig {
        n_workers,
        n_evals,
        check_interval_time: check_interval,
        ..Default::default()
    };
    let search = || -> Result<RandomSearch> {
        Ok(RandomSearch::new(space.clone(), seed)?.with_fidelity(FidelityChoice::Uniform {
            key: "z".into(),
            lower: 0.0,
            upper: 1.0,
        }))
    };
    let oracle = oracle_simulate(
        &mut search()?,
        objective.as_ref(),
        &cfg,
        OracleCost::Declared,
    )?;
    let quiet = ScsOptions {
        measure_overhead: false,
        store_dir: None,
    };
    let scs = run_scs(&mut search()?, objective.as_ref(), &cfg, &quiet)?;
    let mcs = run_mcs(
        &mut search()?,
        objective,
        cfg,
        dir,
        &McsOptions {
            measure_overhead: false,
        },
    )?;
    let simulated = oracle.trajectory.iter().map(|r| r.finish_cumtime).fold(0.0, f64::max);
    Ok(ReductionRun {
        seed,
        simulated,
        mcs_wall: mcs.wall_seconds,
        scs_wall: scs.wall_seconds,
        identical: oracle.trajectory == scs.trajectory && oracle.trajectory == mcs.trajectory,
    })
}

pub const MCS_SPEEDUP: f64 = 1e3;
pub const SCS_SPEEDUP: f64 = 1e4;

pub fn reduction_suite(opts: &SuiteOptions) -> Vec<Report> {
    let mut reports = Vec::new();
    for &seed in &opts.seeds {
        let dir = opts.work_dir.join(format!("reduction_{seed}"));
        let run = reduction_run(seed, opts.n_workers, opts.reduction_evals, &dir, 0.001);
        let _ = std::fs::remove_dir_all(&dir);
        match run {
            Ok(r) => {
                reports.push(Report::from_bool(format!("reduction/seed{seed}/identical"), r.identical, ""));
                reports.push(Report::from_bool(
                    format!("reduction/seed{seed}/mcs_speedup"),
                    r.mcs_speedup() >= MCS_SPEEDUP,
                    format!("{:.3e}", r.mcs_speedup()),
                ));
                reports.push(Report::from_bool(
                    format!("reduction/seed{seed}/scs_speedup"),
                    r.scs_speedup() >= SCS_SPEEDUP,
                    format!("{:.3e}", r.scs_speedup()),
                ));
            }
            Err(e) => reports.push(Report::fail(format!("reduction/seed{seed}"), e.to_string())),
        }
    }
    reports
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Vec<Report> {
    match suite {
        Suite::Order => order_suite(opts),
        Suite::Runtime => runtime_suite(opts),
        Suite::Handcrafted => handcrafted_suite(opts),
        Suite::Reduction => reduction_suite(opts),
    }
}

/// Successive halving with restarts on 3/9/27 epochs of the 6D Hartmann
/// function (runtime grows with the epoch count).
pub fn continual_check(seed: u64, dir: &Path) -> Vec<Report> {
    let check = format!("continual/seed{seed}");
    let r = (|| -> Result<Vec<Report>> {
        let bench = Hartmann::new(6, 100.0)?.with_fidelity(FidelityScale::Epochs {
            key: "epoch".into(),
            max: 27.0,
        });
        let space = bench.search_space();
        let settings = HalvingSettings {
            eta: 3,
            min_fidel: 3.0,
            max_fidel: 27.0,
            fidel_key: "epoch".into(),
            obj_key: "loss".into(),
        };
        let make = || SuccessiveHalving::new(space.clone(), settings.clone(), seed);
        let n_evals = make()?.bracket_size();
        let cfg = WrapperConfig {
            n_workers: 4,
            n_evals,
            continual_max_fidel: Some(27.0),
            fidel_keys: vec!["epoch".into()],
            check_interval_time: 0.001,
            ..Default::default()
        };
        let objective = Arc::new(BenchmarkObjective(bench.clone()));
        let oracle = oracle_simulate(&mut make()?, objective.as_ref(), &cfg, OracleCost::Declared)?;
        let quiet = ScsOptions {
            measure_overhead: false,
            store_dir: None,
        };
        let scs = run_scs(&mut make()?, objective.as_ref(), &cfg, &quiet)?;
        let mcs = run_mcs(
            &mut make()?,
            objective,
            cfg,
            dir,
            &McsOptions {
                measure_overhead: false,
            },
        )?
        .trajectory;

        let full = |r: &TrajectoryRecord, epoch: f64| -> Result<f64> {
            let fidels = [("epoch".to_string(), epoch)].into();
            Ok(bench.evaluate(r.config.as_ref().expect("kept"), &fidels, None)?.runtime)
        };
        let mut bad = Vec::new();
        let mut promotions = 0;
        for r in &mcs {
            let epoch = r.args.as_ref().and_then(|a| a.fidels.get("epoch").copied()).unwrap_or(0.0);
            let expected = if epoch > 3.0 {
                promotions += 1;
                full(r, epoch)? - full(r, epoch / 3.0)?
            } else {
                full(r, epoch)?
            };
            if r.runtime != expected {
                bad.push(format!("epoch {epoch}: {} != {expected}", r.runtime));
            }
        }
        let total = |t: &[TrajectoryRecord]| t.iter().map(|r| r.runtime).sum::<f64>();
        let totals_equal = total(&mcs) == total(&oracle.trajectory) && total(&scs.trajectory) == total(&oracle.trajectory);
        Ok(vec![
            Report::from_bool(
                format!("{check}/promotions"),
                bad.is_empty() && promotions == 4,
                if bad.is_empty() {
                    format!("{promotions} promotions")
                } else {
                    bad.join("; ")
                },
            ),
            Report::from_bool(format!("{check}/total_runtime"), totals_equal, ""),
            compare(format!("{check}/mcs_vs_oracle"), &oracle.trajectory, &mcs, 0.0),
            compare(format!("{check}/scs_vs_oracle"), &oracle.trajectory, &scs.trajectory, 0.0),
        ])
    })();
    r.unwrap_or_else(|e| vec![Report::fail(check, e.to_string())])
}

fn noisy_bench(scale: f64, sigma: f64) -> Result<Noisy<Hartmann>> {
    Noisy::new(Hartmann::new(6, scale)?, sigma)
}

fn noisy_search(seed: u64) -> Result<RandomSearch> {
    Ok(RandomSearch::new(Hartmann::new(6, 1.0)?.search_space(), seed)?.with_fidelity(FidelityChoice::Uniform {
        key: "z".into(),
        lower: 0.1,
        upper: 1.0,
    }))
}

/// Noisy 6D Hartmann with random fidelities: the multi-core simulator
/// against a naive run at `kappa`.
pub fn noisy_check(seed: u64, kappa: f64, n_evals: usize, dir: &Path) -> Report {
    let check = format!("noisy/seed{seed}/kappa{kappa}");
    let r = (|| {
        let scale = 100.0;
        let cfg = WrapperConfig {
            n_workers: 4,
            n_evals,
            check_interval_time: 0.005,
            ..Default::default()
        };
        let objective = Arc::new(BenchmarkObjective(noisy_bench(scale, 0.1)?));
        let started = Instant::now();
        let mcs = run_mcs(&mut noisy_search(seed)?, objective.clone(), cfg.clone(), dir, &McsOptions::default())?;
        let naive = naive_run(&mut noisy_search(seed)?, objective.as_ref(), &cfg, kappa)?;
        let mut report = compare(check.clone(), &naive.trajectory, &mcs.trajectory, 1e-2);
        let note = format!(
            "lateness {:.2e} s, wall {:.1} s",
            naive.max_lateness,
            started.elapsed().as_secs_f64()
        );
        report.detail = Some(match report.detail.take() {
            Some(d) => format!("{d}; {note}"),
            None => note,
        });
        Ok(report)
    })();
    failed(check, r)
}

/// Seeds for [`noisy_check`] whose reference run a naive run at `kappa`
/// can resolve.
pub fn noisy_seeds(count: usize, kappa: f64, n_evals: usize) -> Result<Vec<u64>> {
    let overhead = measure_call_overhead(20);
    let cfg = WrapperConfig {
        n_workers: 4,
        n_evals,
        ..Default::default()
    };
    let objective = BenchmarkObjective(noisy_bench(100.0, 0.1)?);
    let mut seeds = Vec::new();
    let mut next = 0u64;
    while seeds.len() < count {
        let (seed, _) = select_naive_seed(next..next + 200, kappa, overhead, |s| {
            Ok(oracle_simulate(&mut noisy_search(s)?, &objective, &cfg, OracleCost::Declared)?.trajectory)
        })?;
        seeds.push(seed);
        next = seed + 1;
    }
    Ok(seeds)
}

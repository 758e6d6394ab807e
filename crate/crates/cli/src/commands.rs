use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use mfsim_core::benchmarks::{self, BenchmarkObjective};
use mfsim_core::optimizers::{self, sequence_objective};
use mfsim_core::store::{self, LaunchMode, LogEntry, Meta, META_FILE, RESULTS_FILE};
use mfsim_core::verify::{naive_run, oracle_simulate, suites, timeline, OracleCost, Report, Suite, SuiteOptions};
use mfsim_core::{
    run_mcs, run_scs, Ask, AskTellOptimizer, McsOptions, Objective, ScsOptions, Store, TrajectoryRecord, Wrapper,
};
use serde::{Deserialize, Serialize};

use crate::manifest::{Mode, RunManifest};

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Usage(String),
    /// Anything that went wrong while running: exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<mfsim_core::Error> for CliError {
    fn from(e: mfsim_core::Error) -> Self {
        match e {
            mfsim_core::Error::Config(_) | mfsim_core::Error::Domain(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMELINE_FILE: &str = "timeline.tsv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub n_results: usize,
    /// Largest finish time in the log, in simulated seconds.
    pub simulated_seconds: f64,
    pub wall_seconds: f64,
    /// Simulated over wall time.
    pub speedup: f64,
    pub results_dir: PathBuf,
}

pub fn results_dir(m: &RunManifest) -> PathBuf {
    store::run_dir(m.output.root.as_deref(), &m.wrapper.save_dir_name)
}

fn build_objective(m: &RunManifest) -> Result<(Arc<dyn Objective>, Vec<benchmarks::Bound>), CliError> {
    if m.benchmark.name == "sequence" {
        return Ok((Arc::new(sequence_objective), Vec::new()));
    }
    let bench = benchmarks::from_name(&m.benchmark.name, &m.benchmark.params)?;
    let space = bench.search_space();
    Ok((Arc::new(BenchmarkObjective(bench)), space))
}

fn build_optimizer(
    m: &RunManifest,
    space: Vec<benchmarks::Bound>,
    sleep_scale: f64,
    seed_offset: u64,
) -> Result<Box<dyn AskTellOptimizer>, CliError> {
    let mut params = m.optimizer_params();
    params.sleep_scale = Some(params.sleep_scale.unwrap_or(1.0) * sleep_scale);
    params.seed = params.seed.map(|s| s.wrapping_add(seed_offset));
    Ok(optimizers::from_name(&m.optimizer.name, &params, space, m.runtime_sequence()?)?)
}

fn write_log(dir: &Path, n_workers: usize, trajectory: &[TrajectoryRecord], store_config: bool) -> Result<(), CliError> {
    let store = Store::create_fresh(dir, n_workers, LaunchMode::InProcess)?;
    for r in trajectory {
        let mut entry = LogEntry::from_record(r);
        if !store_config {
            entry.config = None;
            entry.fidels = None;
            entry.seed = None;
        }
        store.append_result(&entry)?;
    }
    Ok(())
}

/// Executes a manifest and writes the log, a manifest copy and a summary
/// into the results directory.
pub fn cmd_run(m: &RunManifest) -> Result<RunSummary, CliError> {
    let dir = results_dir(m);
    let (objective, space) = build_objective(m)?;
    let cfg = m.wrapper.clone();
    let started = Instant::now();
    let trajectory = match m.mode {
        Mode::Oracle => {
            let mut opt = build_optimizer(m, space, 0.0, 0)?;
            let run = oracle_simulate(opt.as_mut(), objective.as_ref(), &cfg, OracleCost::Declared)?;
            write_log(&dir, cfg.n_workers, &run.trajectory, cfg.store_config)?;
            run.trajectory
        }
        Mode::Scs => {
            let mut opt = build_optimizer(m, space, 0.0, 0)?;
            let options = ScsOptions {
                measure_overhead: m.measure_overhead,
                store_dir: Some(dir.clone()),
            };
            run_scs(opt.as_mut(), objective.as_ref(), &cfg, &options)?.trajectory
        }
        Mode::Naive => {
            let mut opt = build_optimizer(m, space, m.kappa, 0)?;
            let run = naive_run(opt.as_mut(), objective.as_ref(), &cfg, m.kappa)?;
            write_log(&dir, cfg.n_workers, &run.trajectory, cfg.store_config)?;
            run.trajectory
        }
        Mode::Mcs if cfg.launch_multiple_wrappers_from_user_side => run_user_side(m, &dir)?,
        Mode::Mcs => {
            let mut opt = build_optimizer(m, space, 1.0, 0)?;
            let options = McsOptions {
                measure_overhead: m.measure_overhead,
            };
            run_mcs(opt.as_mut(), objective, cfg.clone(), &dir, &options)?.trajectory
        }
    };
    let wall_seconds = started.elapsed().as_secs_f64();
    let simulated_seconds = trajectory.iter().map(|r| r.finish_cumtime).fold(0.0, f64::max);
    let summary = RunSummary {
        mode: m.mode,
        n_results: trajectory.len(),
        simulated_seconds,
        wall_seconds,
        speedup: simulated_seconds / wall_seconds,
        results_dir: dir.clone(),
    };
    write_artifacts(m, &dir, &summary)?;
    Ok(summary)
}

fn write_artifacts(m: &RunManifest, dir: &Path, summary: &RunSummary) -> Result<(), CliError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, m.to_toml()).map_err(io_err(&manifest_path))?;
    let summary_text = serde_json::to_string_pretty(summary).expect("summaries serialize") + "\n";
    let summary_path = dir.join(SUMMARY_FILE);
    fs::write(&summary_path, &summary_text).map_err(io_err(&summary_path))?;
    if let Some(path) = &m.output.summary {
        fs::write(path, &summary_text).map_err(io_err(path))?;
    }
    if let Some(path) = &m.output.log {
        fs::copy(dir.join(RESULTS_FILE), path).map_err(io_err(path))?;
    }
    Ok(())
}

/// Spawns one `worker` process per worker over a shared directory.
fn run_user_side(m: &RunManifest, dir: &Path) -> Result<Vec<TrajectoryRecord>, CliError> {
    if m.optimizer.name.starts_with("fixed_") {
        return Err(CliError::Usage(
            "user-side launches need an optimizer that each process can run on its own".into(),
        ));
    }
    let n = m.wrapper.n_workers;
    let store = Store::create_fresh(dir, n, LaunchMode::UserSide)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, m.to_toml()).map_err(io_err(&manifest_path))?;
    let exe = std::env::current_exe().map_err(|e| CliError::Runtime(e.to_string()))?;
    let children = (0..n)
        .map(|rank| {
            Command::new(&exe)
                .arg("worker")
                .arg(&manifest_path)
                .arg("--rank")
                .arg(rank.to_string())
                .arg("--dir")
                .arg(dir)
                .spawn()
                .map_err(|e| CliError::Runtime(format!("spawning worker {rank}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut failed = Vec::new();
    for (rank, mut child) in children.into_iter().enumerate() {
        let status = child.wait().map_err(|e| CliError::Runtime(e.to_string()))?;
        if !status.success() {
            failed.push(rank);
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Runtime(format!("worker processes {failed:?} failed")));
    }
    Ok(store.read_trajectory()?)
}

/// Body of one user-side worker process: its own optimizer, evaluating
/// through the shared directory until the budget is used.
pub fn cmd_worker(m: &RunManifest, rank: u64, dir: &Path) -> Result<(), CliError> {
    let (objective, space) = build_objective(m)?;
    let mut opt = build_optimizer(m, space, 1.0, rank)?;
    let mut wrapper = Wrapper::join_user_side(objective, m.wrapper.clone(), dir)?;
    wrapper.worker_index()?;
    loop {
        if wrapper.store().get_n_results()? >= m.wrapper.n_evals {
            break;
        }
        let suggestion = match opt.ask()? {
            Ask::Suggest(s) => s,
            Ask::Wait | Ask::Finished => break,
        };
        let objectives = wrapper.evaluate(suggestion.config.clone(), suggestion.args.clone())?;
        opt.tell(&suggestion.config, &suggestion.args, &objectives, 0.0)?;
    }
    wrapper.retire()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct VerifyArgs {
    pub suite: Suite,
    pub seeds: usize,
    pub real_sleep: bool,
    pub work_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Runs a verification suite; the second value tells whether every check passed.
pub fn cmd_verify(args: &VerifyArgs) -> Result<(Vec<Report>, bool), CliError> {
    let tmp;
    let work_dir = match &args.work_dir {
        Some(d) => d.clone(),
        None => {
            tmp = std::env::temp_dir().join(format!("mfsim-verify-{}", std::process::id()));
            tmp
        }
    };
    let mut opts = SuiteOptions::new(&work_dir);
    opts.seeds = (0..args.seeds as u64).collect();
    opts.real_sleep = args.real_sleep;
    let reports = suites::run_suite(args.suite, &opts);
    if args.work_dir.is_none() {
        let _ = fs::remove_dir_all(&work_dir);
    }
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
        fs::write(path, text).map_err(io_err(path))?;
    }
    let ok = reports.iter().all(Report::passed);
    Ok((reports, ok))
}

/// Reads the result log of a finished run directory.
pub fn read_run(dir: &Path) -> Result<Vec<TrajectoryRecord>, CliError> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| CliError::Runtime(format!("{} is not a complete run directory: {e}", dir.display())))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", meta_path.display())))?;
    let store = Store::open(dir, meta.n_workers, meta.mode)?;
    Ok(store.read_trajectory()?)
}

/// Writes the per-worker intervals, and optionally the event list, of a run.
pub fn cmd_timeline(dir: &Path, out: Option<&Path>, events: Option<&Path>) -> Result<PathBuf, CliError> {
    let trajectory = read_run(dir)?;
    let out = out.map_or_else(|| dir.join(TIMELINE_FILE), Path::to_path_buf);
    let text = if trajectory.is_empty() {
        String::new()
    } else {
        timeline::to_text(&timeline::intervals(&trajectory))
    };
    fs::write(&out, text).map_err(io_err(&out))?;
    if let Some(path) = events {
        let mut text = String::from("time\tworker\tsample\tkind\n");
        for e in timeline::events(&trajectory) {
            let kind = serde_json::to_value(e.kind).expect("kinds serialize");
            text.push_str(&format!(
                "{:?}\t{}\t{}\t{}\n",
                e.time,
                e.worker,
                e.sample,
                kind.as_str().unwrap_or_default()
            ));
        }
        fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(out)
}

pub fn cmd_probe_register(dir: &Path, n_workers: usize) -> Result<usize, CliError> {
    let store = Store::open(dir, n_workers, LaunchMode::UserSide)?;
    Ok(store.register_worker(&std::process::id().to_string())?)
}

pub fn cmd_probe_append(dir: &Path, n_workers: usize, worker: usize, count: usize) -> Result<(), CliError> {
    let store = Store::open(dir, n_workers, LaunchMode::UserSide)?;
    for i in 0..count {
        let entry = LogEntry {
            cumtime: i as f64,
            objectives: [("loss".to_string(), i as f64)].into(),
            worker,
            runtime: 1.0,
            overhead: 0.0,
            config: Some([("index".to_string(), i as f64)].into()),
            fidels: None,
            seed: None,
        };
        store.append_result(&entry)?;
    }
    Ok(())
}

//! `mfsim`: run simulations, verification suites and timeline exports.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfsim_core::verify::Suite;

use commands::{CliError, VerifyArgs};
use manifest::{Mode, RunManifest};

#[derive(Parser)]
#[command(name = "mfsim", version, about = "Simulate asynchronous parallel HPO runs on zero-cost benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a run manifest.
    Run(RunArgs),
    /// Run a verification suite against the reference simulation.
    Verify {
        #[arg(long, value_parser = parse_suite)]
        suite: Suite,
        /// Seeds per configuration.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Do not sleep through the sampling overheads of expensive runs.
        #[arg(long)]
        no_sleep: bool,
        /// Keep the run directories here.
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Write the reports as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export per-worker intervals of a finished run.
    Timeline {
        results_dir: PathBuf,
        /// Interval file; defaults to `timeline.tsv` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the event list here.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    #[command(hide = true)]
    Worker {
        manifest: PathBuf,
        #[arg(long)]
        rank: u64,
        #[arg(long)]
        dir: PathBuf,
    },
    #[command(hide = true)]
    Probe {
        #[command(subcommand)]
        action: Probe,
    },
}

#[derive(Subcommand)]
enum Probe {
    /// Register this process and print its worker index.
    Register {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        n_workers: usize,
    },
    /// Append `count` results.
    Append {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        n_workers: usize,
        #[arg(long)]
        worker: usize,
        #[arg(long)]
        count: usize,
    },
}

/// Flag overrides; names follow the wrapper arguments.
#[derive(Args)]
struct RunArgs {
    manifest: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    save_dir_name: Option<String>,
    #[arg(long)]
    n_workers: Option<usize>,
    #[arg(long)]
    n_evals: Option<usize>,
    #[arg(long)]
    continual_max_fidel: Option<f64>,
    #[arg(long)]
    runtime_key: Option<String>,
    #[arg(long, value_delimiter = ',')]
    obj_keys: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    fidel_keys: Option<Vec<String>>,
    #[arg(long)]
    max_waiting_time: Option<f64>,
    #[arg(long)]
    check_interval_time: Option<f64>,
    #[arg(long)]
    store_config: Option<bool>,
}

impl RunArgs {
    fn apply(&self, m: &mut RunManifest) {
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.mode, m.mode);
        set!(self.seed, m.seed);
        set!(self.kappa, m.kappa);
        set!(self.save_dir_name, m.wrapper.save_dir_name);
        set!(self.n_workers, m.wrapper.n_workers);
        set!(self.n_evals, m.wrapper.n_evals);
        set!(self.runtime_key, m.wrapper.runtime_key);
        set!(self.obj_keys, m.wrapper.obj_keys);
        set!(self.fidel_keys, m.wrapper.fidel_keys);
        set!(self.max_waiting_time, m.wrapper.max_waiting_time);
        set!(self.check_interval_time, m.wrapper.check_interval_time);
        set!(self.store_config, m.wrapper.store_config);
        if self.root.is_some() {
            m.output.root = self.root.clone();
        }
        if self.continual_max_fidel.is_some() {
            m.wrapper.continual_max_fidel = self.continual_max_fidel;
        }
    }
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: mfsim_core::Error| e.to_string())
}

fn load(path: &std::path::Path) -> Result<RunManifest, CliError> {
    RunManifest::load(path).map_err(CliError::Usage)
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Cmd::Run(args) => {
            let mut m = load(&args.manifest)?;
            args.apply(&mut m);
            m.validate().map_err(CliError::Usage)?;
            let s = commands::cmd_run(&m)?;
            println!(
                "{} results in {}: simulated {:.3} s, wall {:.3} s, speedup {:.3e}",
                s.n_results,
                s.results_dir.display(),
                s.simulated_seconds,
                s.wall_seconds,
                s.speedup
            );
        }
        Cmd::Verify {
            suite,
            seeds,
            no_sleep,
            work_dir,
            report,
        } => {
            let (reports, ok) = commands::cmd_verify(&VerifyArgs {
                suite,
                seeds,
                real_sleep: !no_sleep,
                work_dir,
                report,
            })?;
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{suite}: {} checks, {failed} failed", reports.len());
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Timeline {
            results_dir,
            out,
            events,
        } => {
            let path = commands::cmd_timeline(&results_dir, out.as_deref(), events.as_deref())?;
            println!("{}", path.display());
        }
        Cmd::Worker { manifest, rank, dir } => {
            let m = load(&manifest)?;
            commands::cmd_worker(&m, rank, &dir)?;
        }
        Cmd::Probe { action } => match action {
            Probe::Register { dir, n_workers } => {
                println!("{}", commands::cmd_probe_register(&dir, n_workers)?);
            }
            Probe::Append {
                dir,
                n_workers,
                worker,
                count,
            } => commands::cmd_probe_append(&dir, n_workers, worker, count)?,
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mfsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

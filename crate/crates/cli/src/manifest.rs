//! The run manifest: one TOML file describing a simulation.

use std::path::{Path, PathBuf};

use mfsim_core::benchmarks::{generate_runtime_sequence, BenchmarkParams, RuntimeDist, RuntimeSequence};
use mfsim_core::optimizers::OptimizerParams;
use mfsim_core::WrapperConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mcs,
    Scs,
    Naive,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    /// A registry name, or `sequence` for the fixed-runtime objective.
    pub name: String,
    #[serde(default)]
    pub params: BenchmarkParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: String,
    #[serde(default)]
    pub params: OptimizerParams,
}

/// Runtimes fed to the fixed-configuration samplers, either listed or drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub dist: Option<RuntimeDist>,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_b() -> f64 {
    5.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Results root; the run lands in `<root>/mfhpo-simulator-info/<save_dir_name>`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Extra copy of the result log.
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// Extra copy of the summary.
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Time scale of naive runs.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Charge the measured duration of `ask` when the optimizer declares no
    /// sampling time. Off by default so simulated logs are reproducible.
    #[serde(default)]
    pub measure_overhead: bool,
    pub benchmark: BenchmarkSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub sequence: Option<SequenceSpec>,
    pub wrapper: WrapperConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_kappa() -> f64 {
    1.0
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let m: RunManifest = toml::from_str(text).map_err(|e| e.to_string())?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifests serialize")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.wrapper.validate().map_err(|e| e.to_string())?;
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(format!("kappa must lie in (0, 1], got {}", self.kappa));
        }
        let fixed = self.optimizer.name.starts_with("fixed_");
        if fixed != (self.benchmark.name == "sequence") {
            return Err("fixed_* optimizers go with the `sequence` benchmark and only with it".into());
        }
        if fixed {
            let seq = self.sequence.as_ref().ok_or("the sequence benchmark needs a [sequence] table")?;
            if seq.values.is_none() && (seq.dist.is_none() || seq.n.is_none()) {
                return Err("[sequence] needs `values` or both `dist` and `n`".into());
            }
        }
        if self.wrapper.launch_multiple_wrappers_from_user_side && self.mode != Mode::Mcs {
            return Err("launch_multiple_wrappers_from_user_side applies to mcs mode only".into());
        }
        Ok(())
    }

    /// Runtime sequence of the fixed samplers, if any.
    pub fn runtime_sequence(&self) -> mfsim_core::Result<Option<RuntimeSequence>> {
        let Some(seq) = &self.sequence else {
            return Ok(None);
        };
        if let Some(v) = &seq.values {
            return Ok(Some(RuntimeSequence(v.clone())));
        }
        match (seq.dist, seq.n) {
            (Some(dist), Some(n)) => {
                generate_runtime_sequence(dist, seq.b, n, seq.seed.unwrap_or(self.seed)).map(Some)
            }
            _ => Ok(None),
        }
    }

    pub fn optimizer_params(&self) -> OptimizerParams {
        let mut p = self.optimizer.params.clone();
        p.seed.get_or_insert(self.seed);
        p
    }
}

//! Closed-form multi-fidelity test functions with runtime models, and the
//! seeded runtime sequences that drive the fixed-configuration sampler.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sim::{config_key, Config, Fidels, Objectives};
use crate::wrapper::Objective;

const BRANIN_A: f64 = 1.0;
const BRANIN_R: f64 = 6.0;
const BRANIN_S: f64 = 10.0;
const BRANIN_DELTA: [f64; 3] = [1e-2, 1e-1, 5e-3];

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_DELTA: f64 = 0.1;

const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const HARTMANN3_P: [[f64; 3]; 4] = [
    [3689.0, 1170.0, 2673.0],
    [4699.0, 4387.0, 7470.0],
    [1091.0, 8732.0, 5547.0],
    [381.0, 5743.0, 8828.0],
];
const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN6_P: [[f64; 6]; 4] = [
    [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
    [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
    [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
    [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
];

/// Runtime scale that makes the slowest 6D Hartmann evaluation last one hour.
pub const ONE_HOUR: f64 = 3600.0;

/// Multi-fidelity Branin. `z` lies in `[0, 1]^3`; `z = 1` is the classic function.
pub fn branin(x: [f64; 2], z: [f64; 3]) -> Result<f64> {
    check_range("x0", x[0], -5.0, 10.0)?;
    check_range("x1", x[1], 0.0, 15.0)?;
    check_unit(&z)?;
    let b = 5.1 / (4.0 * PI * PI) - BRANIN_DELTA[0] * (1.0 - z[0]);
    let c = 5.0 / PI - BRANIN_DELTA[1] * (1.0 - z[1]);
    let t = 1.0 / (8.0 * PI) + BRANIN_DELTA[2] * (1.0 - z[2]);
    let inner = x[1] - b * x[0] * x[0] + c * x[0] - BRANIN_R;
    Ok(BRANIN_A * inner * inner + BRANIN_S * (1.0 - t) * x[0].cos() + BRANIN_S)
}

pub fn branin_runtime(z: [f64; 3], scale: f64) -> Result<f64> {
    check_scale(scale)?;
    check_unit(&z)?;
    Ok(scale * (0.05 + 0.95 * z[0].powf(1.5)))
}

/// Multi-fidelity Hartmann in 3 or 6 dimensions with `z` in `[0, 1]^4`.
///
/// Lower fidelity shrinks the mixture weights: `alpha - delta * (1 - z)`.
pub fn hartmann(x: &[f64], z: [f64; 4]) -> Result<f64> {
    for (j, &v) in x.iter().enumerate() {
        check_range(&format!("x{j}"), v, 0.0, 1.0)?;
    }
    check_unit(&z)?;
    let term = |i: usize| -> f64 {
        let sq: f64 = match x.len() {
            3 => (0..3)
                .map(|j| HARTMANN3_A[i][j] * (x[j] - 1e-4 * HARTMANN3_P[i][j]).powi(2))
                .sum(),
            _ => (0..6)
                .map(|j| HARTMANN6_A[i][j] * (x[j] - 1e-4 * HARTMANN6_P[i][j]).powi(2))
                .sum(),
        };
        let alpha = HARTMANN_ALPHA[i] - HARTMANN_DELTA * (1.0 - z[i]);
        alpha * (-sq).exp()
    };
    match x.len() {
        3 | 6 => Ok(-(0..4).map(term).sum::<f64>()),
        d => Err(Error::Config(format!("hartmann is defined for 3 or 6 dimensions, got {d}"))),
    }
}

pub fn hartmann_runtime(z: [f64; 4], dim: usize, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    check_unit(&z)?;
    let share = match dim {
        3 => (z[0] + z[1].powi(3) + z[2] * z[3]) / 3.0,
        6 => (z[0] + z[1].powi(2) + z[2] + z[3].powi(3)) / 4.0,
        d => return Err(Error::Config(format!("hartmann is defined for 3 or 6 dimensions, got {d}"))),
    };
    Ok(scale * (0.1 + 0.9 * share))
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name}={v} outside [{lo}, {hi}]")))
    }
}

fn check_unit(z: &[f64]) -> Result<()> {
    for (i, &v) in z.iter().enumerate() {
        check_range(&format!("z{}", i + 1), v, 0.0, 1.0)?;
    }
    Ok(())
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("runtime scale must be positive, got {scale}")))
    }
}

/// Objective value and simulated runtime of one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub runtime: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bound {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
        }
    }
}

/// How fidelity arguments map onto the unit fidelity vector `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FidelityScale {
    /// `z` (broadcast to every dimension) and `z1..zK` (per-dimension).
    Unit,
    /// One integer-like fidelity such as epochs; `z = value / max`.
    Epochs { key: String, max: f64 },
}

impl FidelityScale {
    /// Resolves fidelity arguments into `z`. Missing arguments mean full fidelity.
    pub fn resolve<const K: usize>(&self, fidels: &Fidels) -> Result<[f64; K]> {
        let mut z = [1.0; K];
        match self {
            FidelityScale::Unit => {
                for (name, &value) in fidels {
                    if name == "z" {
                        z = [value; K];
                    }
                }
                for (name, &value) in fidels {
                    if name == "z" {
                        continue;
                    }
                    let slot = name
                        .strip_prefix('z')
                        .and_then(|i| i.parse::<usize>().ok())
                        .filter(|i| (1..=K).contains(i))
                        .ok_or_else(|| Error::Config(format!("unknown fidelity {name:?}")))?;
                    z[slot - 1] = value;
                }
            }
            FidelityScale::Epochs { key, max } => {
                for name in fidels.keys() {
                    if name != key {
                        return Err(Error::Config(format!("unknown fidelity {name:?}")));
                    }
                }
                if let Some(&epoch) = fidels.get(key) {
                    if !(epoch > 0.0 && epoch <= *max) {
                        return Err(Error::Domain(format!("{key}={epoch} outside (0, {max}]")));
                    }
                    z = [epoch / max; K];
                }
            }
        }
        Ok(z)
    }

    pub fn bounds(&self, dims: usize) -> Vec<Bound> {
        match self {
            FidelityScale::Unit => vec![Bound::new("z", 0.0, 1.0)]
                .into_iter()
                .chain((1..=dims).map(|i| Bound::new(format!("z{i}"), 0.0, 1.0)))
                .collect(),
            FidelityScale::Epochs { key, max } => vec![Bound::new(key.clone(), 1.0, *max)],
        }
    }
}

/// A benchmark that returns an objective and a simulated runtime instantly.
pub trait MfBenchmark: Send + Sync {
    fn name(&self) -> &str;
    fn search_space(&self) -> Vec<Bound>;
    fn fidelity_space(&self) -> Vec<Bound>;
    fn evaluate(&self, config: &Config, fidels: &Fidels, seed: Option<u64>) -> Result<Evaluation>;

    /// Adapts the benchmark to the objective contract used by the simulators:
    /// the returned map holds `loss` and `runtime`.
    fn query(&self, config: &Config, fidels: &Fidels, seed: Option<u64>) -> Result<Objectives> {
        let e = self.evaluate(config, fidels, seed)?;
        Ok([
            ("loss".to_string(), e.objective),
            ("runtime".to_string(), e.runtime),
        ]
        .into())
    }
}

fn coordinates<const D: usize>(config: &Config) -> Result<[f64; D]> {
    let mut x = [0.0; D];
    for (j, slot) in x.iter_mut().enumerate() {
        *slot = *config
            .get(&format!("x{j}"))
            .ok_or_else(|| Error::Config(format!("config lacks x{j}")))?;
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct Branin {
    pub scale: f64,
    pub fidelity: FidelityScale,
}

impl Branin {
    pub fn new(scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Self {
            scale,
            fidelity: FidelityScale::Unit,
        })
    }
}

impl MfBenchmark for Branin {
    fn name(&self) -> &str {
        "branin"
    }

    fn search_space(&self) -> Vec<Bound> {
        vec![Bound::new("x0", -5.0, 10.0), Bound::new("x1", 0.0, 15.0)]
    }

    fn fidelity_space(&self) -> Vec<Bound> {
        self.fidelity.bounds(3)
    }

    fn evaluate(&self, config: &Config, fidels: &Fidels, _seed: Option<u64>) -> Result<Evaluation> {
        let z = self.fidelity.resolve::<3>(fidels)?;
        Ok(Evaluation {
            objective: branin(coordinates::<2>(config)?, z)?,
            runtime: branin_runtime(z, self.scale)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Hartmann {
    pub dim: usize,
    pub scale: f64,
    pub fidelity: FidelityScale,
    name: String,
}

impl Hartmann {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        if dim != 3 && dim != 6 {
            return Err(Error::Config(format!("hartmann is defined for 3 or 6 dimensions, got {dim}")));
        }
        Ok(Self {
            dim,
            scale,
            fidelity: FidelityScale::Unit,
            name: format!("hartmann{dim}"),
        })
    }

    /// The 6D function with its slowest evaluation taking one hour.
    pub fn one_hour_6d() -> Self {
        Self::new(6, ONE_HOUR).expect("valid preset")
    }

    pub fn with_fidelity(mut self, fidelity: FidelityScale) -> Self {
        self.fidelity = fidelity;
        self
    }
}

impl MfBenchmark for Hartmann {
    fn name(&self) -> &str {
        &self.name
    }

    fn search_space(&self) -> Vec<Bound> {
        (0..self.dim).map(|j| Bound::new(format!("x{j}"), 0.0, 1.0)).collect()
    }

    fn fidelity_space(&self) -> Vec<Bound> {
        self.fidelity.bounds(4)
    }

    fn evaluate(&self, config: &Config, fidels: &Fidels, _seed: Option<u64>) -> Result<Evaluation> {
        let z = self.fidelity.resolve::<4>(fidels)?;
        let objective = if self.dim == 3 {
            hartmann(&coordinates::<3>(config)?, z)?
        } else {
            hartmann(&coordinates::<6>(config)?, z)?
        };
        Ok(Evaluation {
            objective,
            runtime: hartmann_runtime(z, self.dim, self.scale)?,
        })
    }
}

/// Adds Gaussian noise to the objective of another benchmark; runtimes are untouched.
///
/// The noise is a pure function of (config, fidelities, seed), so repeated
/// queries and separate processes see the same value.
pub struct Noisy<B> {
    pub inner: B,
    pub sigma: f64,
    name: String,
}

impl<B: MfBenchmark> Noisy<B> {
    pub fn new(inner: B, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be nonnegative, got {sigma}")));
        }
        let name = format!("noisy_{}", inner.name());
        Ok(Self { inner, sigma, name })
    }
}

impl<B: MfBenchmark> MfBenchmark for Noisy<B> {
    fn name(&self) -> &str {
        &self.name
    }

    fn search_space(&self) -> Vec<Bound> {
        self.inner.search_space()
    }

    fn fidelity_space(&self) -> Vec<Bound> {
        self.inner.fidelity_space()
    }

    fn evaluate(&self, config: &Config, fidels: &Fidels, seed: Option<u64>) -> Result<Evaluation> {
        let mut e = self.inner.evaluate(config, fidels, seed)?;
        let mut key = config_key(config, seed);
        for (k, v) in fidels {
            key.push_str(&format!("|{k}={v:.16e}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
        e.objective += self.sigma * standard_normal(open_unit(&mut rng));
        Ok(e)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Uniform draw on the open interval (0, 1) from the top 53 bits.
fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn standard_normal(u: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(u)
}

/// Exposes a benchmark as a simulator objective returning `loss` and `runtime`.
pub struct BenchmarkObjective<B>(pub B);

impl<B: MfBenchmark> Objective for BenchmarkObjective<B> {
    fn call(&self, config: &Config, fidels: &Fidels, seed: Option<u64>) -> Result<Objectives> {
        self.0.query(config, fidels, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuntimeDist {
    Uniform,
    Exponential,
    Pareto,
    Lognormal,
}

impl RuntimeDist {
    pub const ALL: [RuntimeDist; 4] = [
        RuntimeDist::Uniform,
        RuntimeDist::Exponential,
        RuntimeDist::Pareto,
        RuntimeDist::Lognormal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuntimeDist::Uniform => "uniform",
            RuntimeDist::Exponential => "exponential",
            RuntimeDist::Pareto => "pareto",
            RuntimeDist::Lognormal => "lognormal",
        }
    }

    /// Maps a uniform draw on (0, 1) through the inverse CDF, scaled by `b`.
    fn transform(self, u: f64, b: f64) -> f64 {
        match self {
            RuntimeDist::Uniform => b * 2.0 * u,
            RuntimeDist::Exponential => -b * (1.0 - u).ln(),
            RuntimeDist::Pareto => b / (1.0 - u) - 1.0,
            RuntimeDist::Lognormal => b * (standard_normal(u) - 0.5).exp(),
        }
    }
}

impl FromStr for RuntimeDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuntimeDist::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown runtime distribution {s:?}")))
    }
}

/// Pre-generated runtimes for the fixed-configuration sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSequence(pub Vec<f64>);

impl RuntimeSequence {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Draws `n` runtimes with mean `b` (Pareto has infinite mean) using ChaCha8
/// seeded from `seed` and inverse-CDF transforms.
pub fn generate_runtime_sequence(dist: RuntimeDist, b: f64, n: usize, seed: u64) -> Result<RuntimeSequence> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Config(format!("runtime scale b must be positive, got {b}")));
    }
    if n == 0 {
        return Err(Error::Config("runtime sequence needs at least one entry".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(RuntimeSequence(
        (0..n).map(|_| dist.transform(open_unit(&mut rng), b)).collect(),
    ))
}

/// Builds a benchmark from its registry name and parameters.
pub fn from_name(name: &str, params: &BenchmarkParams) -> Result<Box<dyn MfBenchmark>> {
    let fidelity = match &params.fidel_key {
        Some(key) => FidelityScale::Epochs {
            key: key.clone(),
            max: params.max_fidel.ok_or_else(|| {
                Error::Config("an epoch fidelity needs max_fidel".into())
            })?,
        },
        None => FidelityScale::Unit,
    };
    let base: Box<dyn MfBenchmark> = match name {
        "branin" => Box::new(Branin {
            fidelity,
            ..Branin::new(params.scale.unwrap_or(1.0))?
        }),
        "hartmann3" | "hartmann6" | "hartmann" => {
            let dim = match name {
                "hartmann3" => 3,
                "hartmann6" => 6,
                _ => params.dim.unwrap_or(6),
            };
            Box::new(Hartmann::new(dim, params.scale.unwrap_or(1.0))?.with_fidelity(fidelity))
        }
        other => return Err(Error::Config(format!("unknown benchmark {other:?}"))),
    };
    match params.noise_sigma {
        Some(sigma) if sigma > 0.0 => Ok(Box::new(Noisy::new(base, sigma)?)),
        _ => Ok(base),
    }
}

impl MfBenchmark for Box<dyn MfBenchmark> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn search_space(&self) -> Vec<Bound> {
        (**self).search_space()
    }

    fn fidelity_space(&self) -> Vec<Bound> {
        (**self).fidelity_space()
    }

    fn evaluate(&self, config: &Config, fidels: &Fidels, seed: Option<u64>) -> Result<Evaluation> {
        (**self).evaluate(config, fidels, seed)
    }
}

/// Registry parameters, named after manifest keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkParams {
    /// Runtime scale `C`.
    #[serde(default, rename = "C", alias = "scale")]
    pub scale: Option<f64>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    /// Name of an epoch-style fidelity; unit fidelities are used when absent.
    #[serde(default)]
    pub fidel_key: Option<String>,
    #[serde(default)]
    pub max_fidel: Option<f64>,
}

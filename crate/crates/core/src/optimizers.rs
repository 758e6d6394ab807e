//! In-repo optimizers: the fixed-configuration test sampler, random search,
//! and synchronous successive halving.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{Bound, RuntimeSequence};
use crate::error::{Error, Result};
use crate::scs::{Ask, AskTellOptimizer, Suggestion};
use crate::sim::{Config, EvalArgs, Fidels, Objectives};

/// How long the fixed sampler spends choosing a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingCost {
    /// Returns immediately.
    Cheap,
    /// Spends `c * (|D| + 1)` seconds, where `|D|` is the number of
    /// observations told so far.
    Expensive { c: f64 },
}

impl SamplingCost {
    pub fn overhead(self, n_observed: usize) -> f64 {
        match self {
            SamplingCost::Cheap => 0.0,
            SamplingCost::Expensive { c } => c * (n_observed as f64 + 1.0),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            SamplingCost::Expensive { c } if !(c > 0.0 && c.is_finite()) => {
                Err(Error::Config(format!("expensive sampling needs c > 0, got {c}")))
            }
            _ => Ok(()),
        }
    }
}

/// Objective used with the fixed sampler: the configuration carries its own
/// runtime, and the loss is the sample index.
pub fn sequence_objective(config: &Config, _fidels: &Fidels, _seed: Option<u64>) -> Result<Objectives> {
    let runtime = *config
        .get("runtime")
        .ok_or_else(|| Error::Objective("config lacks runtime".into()))?;
    let index = config.get("index").copied().unwrap_or(0.0);
    Ok([("loss".to_string(), index), ("runtime".to_string(), runtime)].into())
}

/// Hands out a pre-generated runtime sequence one entry per ask.
#[derive(Clone, Debug)]
pub struct FixedConfigSampler {
    sequence: RuntimeSequence,
    cursor: usize,
    cost: SamplingCost,
    observed: usize,
    /// Real seconds slept per declared overhead second; zero disables sleeping.
    sleep_scale: f64,
    declare: bool,
}

impl FixedConfigSampler {
    pub fn new(sequence: RuntimeSequence, cost: SamplingCost) -> Result<Self> {
        cost.validate()?;
        Ok(Self {
            sequence,
            cursor: 0,
            cost,
            observed: 0,
            sleep_scale: 1.0,
            declare: true,
        })
    }

    /// Scales the real sleep of the expensive model; the declared overhead
    /// is unchanged.
    pub fn with_sleep_scale(mut self, scale: f64) -> Self {
        self.sleep_scale = scale;
        self
    }

    /// Leaves the overhead for the caller to measure instead of declaring it.
    pub fn undeclared(mut self) -> Self {
        self.declare = false;
        self
    }

    pub fn n_observed(&self) -> usize {
        self.observed
    }

    pub fn remaining(&self) -> usize {
        self.sequence.len() - self.cursor
    }
}

impl AskTellOptimizer for FixedConfigSampler {
    fn ask(&mut self) -> Result<Ask> {
        let Some(&runtime) = self.sequence.as_slice().get(self.cursor) else {
            return Ok(Ask::Finished);
        };
        let overhead = self.cost.overhead(self.observed);
        if overhead > 0.0 && self.sleep_scale > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(overhead * self.sleep_scale));
        }
        let config: Config = [
            ("index".to_string(), self.cursor as f64),
            ("runtime".to_string(), runtime),
        ]
        .into();
        self.cursor += 1;
        Ok(Ask::Suggest(Suggestion {
            config,
            args: EvalArgs::default(),
            overhead: self.declare.then_some(overhead),
        }))
    }

    fn tell(&mut self, _config: &Config, _args: &EvalArgs, _objectives: &Objectives, _runtime: f64) -> Result<()> {
        self.observed += 1;
        Ok(())
    }
}

/// Which fidelity random search attaches to its samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FidelityChoice {
    /// No fidelity arguments: the benchmark's full fidelity.
    Full,
    /// A fidelity drawn uniformly from `[lower, upper]` with every sample.
    Uniform { key: String, lower: f64, upper: f64 },
}

fn draw(rng: &mut ChaCha8Rng, lower: f64, upper: f64) -> f64 {
    lower + (upper - lower) * rng.gen::<f64>()
}

fn check_space(space: &[Bound]) -> Result<()> {
    if space.is_empty() {
        return Err(Error::Config("search space is empty".into()));
    }
    for b in space {
        if !(b.lower <= b.upper && b.lower.is_finite() && b.upper.is_finite()) {
            return Err(Error::Config(format!(
                "bad bounds for {}: [{}, {}]",
                b.name, b.lower, b.upper
            )));
        }
    }
    Ok(())
}

/// Independent uniform samples within the bounds, reproducible per seed.
#[derive(Clone, Debug)]
pub struct RandomSearch {
    space: Vec<Bound>,
    rng: ChaCha8Rng,
    fidelity: FidelityChoice,
    eval_seed: Option<u64>,
}

impl RandomSearch {
    pub fn new(space: Vec<Bound>, seed: u64) -> Result<Self> {
        check_space(&space)?;
        Ok(Self {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            fidelity: FidelityChoice::Full,
            eval_seed: None,
        })
    }

    pub fn with_fidelity(mut self, fidelity: FidelityChoice) -> Self {
        self.fidelity = fidelity;
        self
    }

    /// Seed passed to the benchmark with every query.
    pub fn with_eval_seed(mut self, seed: Option<u64>) -> Self {
        self.eval_seed = seed;
        self
    }

    pub fn sample(&mut self) -> (Config, EvalArgs) {
        let config = self
            .space
            .iter()
            .map(|b| (b.name.clone(), draw(&mut self.rng, b.lower, b.upper)))
            .collect();
        let fidels = match &self.fidelity {
            FidelityChoice::Full => Fidels::new(),
            FidelityChoice::Uniform { key, lower, upper } => {
                [(key.clone(), draw(&mut self.rng, *lower, *upper))].into()
            }
        };
        (config, EvalArgs::new(fidels, self.eval_seed))
    }
}

impl AskTellOptimizer for RandomSearch {
    fn ask(&mut self) -> Result<Ask> {
        let (config, args) = self.sample();
        Ok(Ask::Suggest(Suggestion {
            config,
            args,
            overhead: None,
        }))
    }

    fn tell(&mut self, _config: &Config, _args: &EvalArgs, _objectives: &Objectives, _runtime: f64) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalvingSettings {
    pub eta: usize,
    pub min_fidel: f64,
    pub max_fidel: f64,
    pub fidel_key: String,
    pub obj_key: String,
}

impl HalvingSettings {
    /// Fidelities `min * eta^k` not exceeding `max`.
    pub fn rungs(&self) -> Result<Vec<f64>> {
        if self.eta < 2 {
            return Err(Error::Config(format!("eta must be at least 2, got {}", self.eta)));
        }
        if !(self.min_fidel > 0.0 && self.min_fidel <= self.max_fidel && self.max_fidel.is_finite()) {
            return Err(Error::Config(format!(
                "invalid fidelity grid [{}, {}]",
                self.min_fidel, self.max_fidel
            )));
        }
        let mut rungs = vec![self.min_fidel];
        loop {
            let next = rungs.last().unwrap() * self.eta as f64;
            if next > self.max_fidel * (1.0 + 1e-12) {
                break;
            }
            rungs.push(next);
        }
        Ok(rungs)
    }
}

#[derive(Clone, Debug)]
struct RungResult {
    objective: f64,
    told: usize,
    config: Config,
}

/// One synchronous successive-halving bracket.
///
/// The first rung holds `eta^(K-1)` random configurations for `K` rungs;
/// each later rung keeps the best `max(1, floor(m / eta))` of the previous
/// one and re-asks them at the next fidelity. Ties go to the earlier result.
#[derive(Clone, Debug)]
pub struct SuccessiveHalving {
    settings: HalvingSettings,
    rungs: Vec<f64>,
    sampler: RandomSearch,
    rung: usize,
    to_sample: usize,
    queue: Vec<Config>,
    outstanding: usize,
    results: Vec<RungResult>,
    told: usize,
    finished: bool,
    eval_seed: Option<u64>,
}

impl SuccessiveHalving {
    pub fn new(space: Vec<Bound>, settings: HalvingSettings, seed: u64) -> Result<Self> {
        let rungs = settings.rungs()?;
        let first = settings.eta.pow(rungs.len() as u32 - 1);
        Ok(Self {
            sampler: RandomSearch::new(space, seed)?,
            settings,
            rungs,
            rung: 0,
            to_sample: first,
            queue: Vec::new(),
            outstanding: 0,
            results: Vec::new(),
            told: 0,
            finished: false,
            eval_seed: None,
        })
    }

    pub fn with_eval_seed(mut self, seed: Option<u64>) -> Self {
        self.eval_seed = seed;
        self
    }

    pub fn rungs(&self) -> &[f64] {
        &self.rungs
    }

    /// Number of evaluations in a full bracket.
    pub fn bracket_size(&self) -> usize {
        let eta = self.settings.eta;
        let mut m = eta.pow(self.rungs.len() as u32 - 1);
        let mut total = 0;
        for _ in &self.rungs {
            total += m;
            m = (m / eta).max(1);
        }
        total
    }

    fn suggestion(&self, config: Config) -> Ask {
        let fidels = [(self.settings.fidel_key.clone(), self.rungs[self.rung])].into();
        Ask::Suggest(Suggestion {
            config,
            args: EvalArgs::new(fidels, self.eval_seed),
            overhead: None,
        })
    }
}

impl AskTellOptimizer for SuccessiveHalving {
    fn ask(&mut self) -> Result<Ask> {
        if self.finished {
            return Ok(Ask::Finished);
        }
        if self.to_sample > 0 {
            self.to_sample -= 1;
            self.outstanding += 1;
            let (config, _) = self.sampler.sample();
            return Ok(self.suggestion(config));
        }
        if !self.queue.is_empty() {
            self.outstanding += 1;
            let config = self.queue.remove(0);
            return Ok(self.suggestion(config));
        }
        if self.outstanding > 0 {
            return Ok(Ask::Wait);
        }
        if self.rung + 1 == self.rungs.len() {
            self.finished = true;
            return Ok(Ask::Finished);
        }
        let mut done = std::mem::take(&mut self.results);
        done.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.told.cmp(&b.told)));
        let keep = (done.len() / self.settings.eta).max(1);
        self.queue = done.into_iter().take(keep).map(|r| r.config).collect();
        self.rung += 1;
        self.ask()
    }

    fn tell(&mut self, config: &Config, args: &EvalArgs, objectives: &Objectives, _runtime: f64) -> Result<()> {
        let fidel = args.fidels.get(&self.settings.fidel_key).copied();
        if fidel != Some(self.rungs[self.rung]) || self.outstanding == 0 {
            return Err(Error::Contract(format!(
                "told a result at {fidel:?} while rung {} is at {}",
                self.rung, self.rungs[self.rung]
            )));
        }
        let objective = objectives
            .get(&self.settings.obj_key)
            .copied()
            .ok_or_else(|| Error::Objective(format!("missing objective {:?}", self.settings.obj_key)))?;
        self.outstanding -= 1;
        self.told += 1;
        self.results.push(RungResult {
            objective,
            told: self.told,
            config: config.clone(),
        });
        Ok(())
    }
}

/// Registry parameters, named after manifest keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerParams {
    #[serde(default)]
    pub seed: Option<u64>,
    /// Proportionality constant of the expensive sampler.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub eta: Option<usize>,
    #[serde(default)]
    pub min_fidel: Option<f64>,
    #[serde(default)]
    pub max_fidel: Option<f64>,
    #[serde(default)]
    pub fidel_key: Option<String>,
    /// Draw a uniform unit fidelity `z` with every random-search sample.
    #[serde(default)]
    pub random_fidelity: Option<bool>,
    /// Seed forwarded to the benchmark with every query.
    #[serde(default)]
    pub eval_seed: Option<u64>,
    /// Real seconds slept per declared overhead second.
    #[serde(default)]
    pub sleep_scale: Option<f64>,
}

/// Builds an optimizer from its registry name.
///
/// `fixed_cheap` and `fixed_expensive` need `sequence`; the others sample
/// from `space`.
pub fn from_name(
    name: &str,
    params: &OptimizerParams,
    space: Vec<Bound>,
    sequence: Option<RuntimeSequence>,
) -> Result<Box<dyn AskTellOptimizer>> {
    let seed = params.seed.unwrap_or(0);
    match name {
        "fixed_cheap" | "fixed_expensive" => {
            let sequence =
                sequence.ok_or_else(|| Error::Config(format!("{name} needs a runtime sequence")))?;
            let cost = if name == "fixed_cheap" {
                SamplingCost::Cheap
            } else {
                SamplingCost::Expensive {
                    c: params.c.ok_or_else(|| Error::Config("fixed_expensive needs c".into()))?,
                }
            };
            Ok(Box::new(
                FixedConfigSampler::new(sequence, cost)?.with_sleep_scale(params.sleep_scale.unwrap_or(1.0)),
            ))
        }
        "random_search" => {
            let mut rs = RandomSearch::new(space, seed)?.with_eval_seed(params.eval_seed);
            if params.random_fidelity.unwrap_or(false) {
                rs = rs.with_fidelity(FidelityChoice::Uniform {
                    key: params.fidel_key.clone().unwrap_or_else(|| "z".into()),
                    lower: params.min_fidel.unwrap_or(0.0),
                    upper: params.max_fidel.unwrap_or(1.0),
                });
            }
            Ok(Box::new(rs))
        }
        "successive_halving" => {
            let settings = HalvingSettings {
                eta: params.eta.unwrap_or(3),
                min_fidel: params
                    .min_fidel
                    .ok_or_else(|| Error::Config("successive_halving needs min_fidel".into()))?,
                max_fidel: params
                    .max_fidel
                    .ok_or_else(|| Error::Config("successive_halving needs max_fidel".into()))?,
                fidel_key: params.fidel_key.clone().unwrap_or_else(|| "epoch".into()),
                obj_key: "loss".into(),
            };
            Ok(Box::new(
                SuccessiveHalving::new(space, settings, seed)?.with_eval_seed(params.eval_seed),
            ))
        }
        other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
    }
}

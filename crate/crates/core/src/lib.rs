//! Simulating asynchronous parallel hyperparameter optimization on
//! zero-cost benchmarks.
//!
//! Workers evaluate instantly but keep virtual clocks, and results are
//! released in the order a real run would have produced them.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod error;
pub mod optimizers;
pub mod scs;
pub mod sim;
pub mod store;
pub mod verify;
pub mod wrapper;

pub use benchmarks::{BenchmarkObjective, MfBenchmark, RuntimeDist, RuntimeSequence};
pub use error::{Error, Result};
pub use optimizers::{FixedConfigSampler, RandomSearch, SamplingCost, SuccessiveHalving};
pub use scs::{run_scs, Ask, AskTellOptimizer, ScsOptions, ScsOutcome, Suggestion};
pub use sim::{Config, EvalArgs, EvalRequest, Fidels, IntermediateState, Objectives, TrajectoryRecord};
pub use store::Store;
pub use wrapper::driver::{run_mcs, McsOptions, McsOutcome};
pub use wrapper::{make_worker_pool, Objective, Wrapper, WrapperConfig};

//! Ground truth and comparators for the simulators.

pub mod compare;
pub mod naive;
pub mod oracle;
pub mod suites;
pub mod timeline;

pub use compare::{compare, order_match, runtime_consistency, Consistency, Permutation, Report, Status};
pub use naive::{naive_run, NaiveOutcome};
pub use oracle::{oracle_sequence, oracle_simulate, EventKind, OracleCost, OracleEvent, OracleRun};
pub use suites::{Suite, SuiteOptions};
pub use timeline::{Interval, IntervalKind};

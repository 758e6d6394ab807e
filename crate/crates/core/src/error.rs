use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("worker capacity exceeded: all {n_workers} worker slots are taken")]
    Capacity { n_workers: usize },

    #[error("cumulative runtime of worker {worker} would decrease from {previous} to {value}")]
    Monotonicity {
        worker: usize,
        previous: f64,
        value: f64,
    },

    #[error("store I/O failed on {}: {source}", path.display())]
    Store {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed store file {}: {source}", path.display())]
    Schema {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("evaluation budget exhausted: {0}")]
    Budget(String),

    #[error("objective failed: {0}")]
    Objective(String),

    #[error("comparison failed: {0}")]
    Comparator(String),
}

impl Error {
    pub(crate) fn store(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Store {
            path: path.into(),
            source,
        }
    }
}

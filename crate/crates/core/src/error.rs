use std::path::PathBuf;

use thiserror::Error;

use crate::ranker::SiameseNetwork;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Input header is missing a required column.
    #[error("malformed header: missing column `{0}`")]
    MalformedHeader(String),

    /// Data violates a domain invariant.
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("option count exceeds model capacity ({options} > {r_max})")]
    OptionCapacity { options: usize, r_max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("question {0} is unresolved")]
    Unresolved(String),

    #[error("{0}")]
    Empty(&'static str),

    /// Training produced a non-finite loss. The snapshot holds the parameters
    /// just before the offending step.
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
        snapshot: Box<SiameseNetwork>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::NonFiniteLoss { .. } | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the mechanisms, estimators and dataset loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("random source exhausted after {consumed} draws")]
    Exhausted { consumed: usize },

    #[error("replayed uniform {0} is outside [0, 1)")]
    UniformOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("geometric noise requires integer query answers (value {value} at index {index})")]
    NonIntegerQuery { index: usize, value: f64 },

    #[error("count at index {index} would become negative")]
    NegativeCount { index: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no transactions")]
    NoTransactions(PathBuf),

    #[error("no qualified bins: increase trials or bin width")]
    NoQualifiedBins,

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

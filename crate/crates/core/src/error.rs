use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the abstention library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("hypothesis grid needs at least 2 thresholds, got {0}")]
    InvalidGrid(usize),

    #[error("arm index {index} out of range for a grid of {size} thresholds")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feedback {0} is outside [0, 1]")]
    FeedbackOutOfRange(f64),

    #[error("score {0} is not a finite number")]
    InvalidScore(f64),

    #[error("policy sums to {0}, expected 1")]
    PolicyNotNormalized(f64),

    #[error("estimator denominator is zero (gamma = 0 and no probability mass on the unlock set)")]
    ZeroDenominator,

    #[error("unknown algorithm `{0}` (expected exaul, exp3ix-ca, ew-ca or no-ca)")]
    UnknownAlgorithm(String),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("unknown calibration `{0}` (expected well, over or under)")]
    UnknownCalibration(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}:{line}: {message}")]
    PoolParse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("pool `{0}` is empty")]
    EmptyPool(String),

    #[error("environment `{0}` needs a second pool")]
    MissingSecondPool(&'static str),

    #[error("malformed run output {path}: {message}")]
    RunFormat { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

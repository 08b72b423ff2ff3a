use thiserror::Error;

/// Errors raised by the testing library and the study harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sample size must be even (the variance estimator pairs consecutive responses), got n = {0}")]
    OddSampleSize(usize),

    #[error("sample size {got} is too small, need at least {min}")]
    SampleTooSmall { got: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {x} lies outside the support [0, 1]")]
    OutOfDomain { x: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate variance estimate: every pair of fixed-design responses is equal")]
    DegenerateVariance,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

use thiserror::Error;

/// Errors raised by library operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("hypothesis is empty on the grid")]
    EmptyHypothesis,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DomainMismatch { expected: usize, found: usize },

    #[error("contour is not normalized (grid supremum {sup})")]
    NotNormalized { sup: f64 },

    #[error("calibrator is not admissible: {0}")]
    NotAdmissible(String),

    #[error("regularizer check failed: upper expectation {value} exceeds {limit}")]
    RegularizerBound { value: f64, limit: f64 },

    #[error("no sign change on bracket [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    BracketFailure { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("point {0:?} lies outside the grid domain")]
    OutOfDomain(Vec<f64>),

    #[error("prior is not a credal member: estimate exceeds alpha = {alpha} by {margin}")]
    NotCredalMember { alpha: f64, margin: f64 },

    #[error("data error: {0}")]
    Data(String),

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

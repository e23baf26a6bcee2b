use thiserror::Error;

/// Errors raised by the ensemble engines and their building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Every entry of a weight or evidence vector is zero (or underflowed).
    #[error("all weights are zero")]
    AllZero,
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid weight-transition configuration: {0}")]
    ConfigMismatch(String),
    #[error("weight history is empty")]
    EmptyHistory,
    #[error("innovation covariance is singular")]
    SingularInnovationCov,
    #[error("importance weight {index} is not finite")]
    NonFiniteWeight { index: usize },
    #[error("covariance factorization failed after jitter {jitter:e}")]
    FactorizationFailure { jitter: f64 },
    #[error("total precision of the fused experts is zero")]
    ZeroPrecision,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("covariance of component {component} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { component: usize, min_eigenvalue: f64 },

    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("subset must be nonempty")]
    EmptySubset,

    #[error("subset index {index} out of range for {k} components")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("subset covers every component; its complement is empty")]
    FullSubset,

    #[error("initial subset is not contained in the target subset")]
    NotSubset,

    #[error("non-finite state in reverse trajectory at step {step}")]
    NonFinite { step: usize },

    #[error("log-domain violation: {0}")]
    Domain(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A hyperparameter or configuration value is outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two paired collections disagree in length.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Correlation is undefined because a probability vector is identically zero.
    #[error("correlation undefined: thinning probabilities are identically zero")]
    UndefinedCorrelation,

    /// A thinned measure retained no mass, so it cannot be normalized.
    #[error("empty measure: no retained mass to normalize")]
    EmptyMeasure,

    /// A numerical operation failed (e.g. a singular posterior precision).
    /// These are fatal diagnostics, not conditions to retry.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A state invariant that the samplers must maintain was violated.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// The caller asked for something that requires inputs it did not supply.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

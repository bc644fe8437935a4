//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical procedure failed (diverged, became unstable, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested computation exceeds a configured resource bound.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A nonlinear fit did not converge within the iteration budget.
    #[error("fit did not converge: residual norm {residual:.3e} after {iterations} iterations")]
    FitFailure { residual: f64, iterations: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input data (CSV/JSON/binary records).
    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

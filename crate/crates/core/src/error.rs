use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("operator is not positive definite (CG breakdown at iteration {iteration})")]
    NotPositiveDefinite { iteration: usize },

    #[error("non-scalar loss of shape {0:?} passed to backward")]
    NonScalarLoss(Vec<usize>),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("chain aborted after {iteration} iterations: {reason}")]
    ChainAborted { iteration: usize, reason: String },

    #[error("malformed data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for failures caused by numerics rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SolverFailure { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Range(_)
                | Error::ChainAborted { .. }
        )
    }
}

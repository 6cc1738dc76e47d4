use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum FivarError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("reference matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    SingularReference { min_eigenvalue: f64 },

    #[error("coefficient matrix is singular: {0}")]
    SingularCoefficient(String),

    #[error("power series did not converge within {terms} terms")]
    SeriesDiverged { terms: usize },

    #[error("solver failed after {iterations} iterations: {reason}")]
    SolverFailed { iterations: usize, reason: String },

    #[error("selected rank {selected} is below the minimum of 1")]
    MinimumRank { selected: i64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FivarError>;

pub(crate) fn invalid(msg: impl Into<String>) -> FivarError {
    FivarError::InvalidInput(msg.into())
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(FivarError::DimensionMismatch { expected, actual })
    }
}

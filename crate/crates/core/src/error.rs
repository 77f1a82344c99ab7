use thiserror::Error;

use crate::conesolver::SolveStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A covariance or Gram matrix stayed indefinite for every jitter tried.
    #[error("matrix is not positive definite after jitter ladder {ladder:?}")]
    NotPositiveDefinite { ladder: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("subproblem unsolved (robust: {robust:?}, slacked: {slacked:?})")]
    Subproblem { robust: SolveStatus, slacked: Option<SolveStatus> },

    #[error("oracle returned a non-finite value at evaluation {index}")]
    NonFiniteOracle { index: usize },

    #[error("unknown problem `{name}`; known problems: {known}")]
    UnknownProblem { name: String, known: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed trace: {0}")]
    Trace(String),
}

pub type Result<T> = std::result::Result<T, Error>;

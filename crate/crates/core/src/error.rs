use thiserror::Error;

/// Errors raised by the optimizer and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CboError {
    /// Malformed input: dimension mismatch, nonpositive hyperparameter, duplicate points, ...
    #[error("invalid input: {0}")]
    Input(String),
    /// A factorization or other numerical step failed.
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// The requested method cannot handle this problem (e.g. equality constraints with
    /// probability-of-feasibility acquisitions).
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// The acquisition minimizer could not produce a candidate.
    #[error("solver failure: {0}")]
    Solver(String),
    /// A user callable failed or returned non-finite values.
    #[error("evaluation failure: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, CboError>;

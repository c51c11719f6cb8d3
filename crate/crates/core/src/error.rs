use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("Newton iteration did not converge after {iterations} iterations (score norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("non-finite log posterior at the initial state")]
    NonFiniteLogPosterior,

    #[error("MC budget insufficient: {0}")]
    BudgetInsufficient(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

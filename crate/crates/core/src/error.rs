use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Positions left the cone of strictly increasing configurations.
    #[error("domain error: positions must be strictly increasing (gap {gap:e} at index {index})")]
    Domain { index: usize, gap: f64 },

    #[error("non-finite position at index {0}")]
    NonFinite(usize),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {message}")]
    NumericalFailure { message: String, best: Option<Vec<f64>> },

    #[error("certificate invariant violated: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

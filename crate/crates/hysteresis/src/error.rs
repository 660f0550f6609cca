use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("threshold vectors must have length {expected}, got f={f} r={r}")]
    LengthMismatch { expected: usize, f: usize, r: usize },

    #[error("threshold policy violates the feasibility constraints")]
    InvalidPolicy,

    #[error("iteration limit {iterations} reached (last residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("reducible chain: {0}")]
    Reducible(String),

    #[error("search space of {size} policies exceeds the budget {budget}")]
    BudgetExceeded { size: u128, budget: u128 },

    #[error("unknown identifier `{0}`")]
    Unknown(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

use crate::trace::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arm {arm} is not valid for an instance with {num_arms} arms")]
    InvalidArm { arm: usize, num_arms: usize },

    #[error("instance has no unique best arm")]
    NonUniqueBest,

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("difference set needs at least two arms, got {0}")]
    DegenerateSet(usize),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("test vector {index} lies outside the span of the arm set (residual {residual:.3e})")]
    UnreachableDirection { index: usize, residual: f64 },

    #[error("rounding needs N > d, got N = {total} with d = {dim}")]
    InsufficientBudget { total: usize, dim: usize },

    #[error("rounding guarantee not met after repair: {achieved:.6e} > {bound:.6e}")]
    RoundingFailure { achieved: f64, bound: f64 },

    #[error("batch cap of {max_batches} reached before a single arm remained")]
    BudgetExhausted {
        max_batches: usize,
        trace: Box<RunTrace>,
    },

    #[error("generator parameters rejected: {0}")]
    GeneratorParameter(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

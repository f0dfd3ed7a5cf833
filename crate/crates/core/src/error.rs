use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("infeasible constraint: {0}")]
    Infeasible(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value detected: {0}")]
    NonFinite(String),
    #[error("link budget exceeded in round {round}: {bytes} bytes > {budget} bytes")]
    LinkBudget { round: usize, bytes: usize, budget: usize },
    #[error("message protocol violation: {0}")]
    Protocol(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors produced anywhere in the evaluation workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// Input that violates a documented precondition (bad spans, bad sizes, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A function was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    Empty(String),
    /// A numerical routine failed to produce a usable answer.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A search or filter eliminated every candidate.
    #[error("no result: {0}")]
    NoResult(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

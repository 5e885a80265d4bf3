use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid construction parameters for a measure, grid, kernel or system.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// The requested computation exceeds a hard resource budget.
    #[error("resource error: {0}")]
    Resource(String),
    /// The caller broke an operation contract.
    #[error("contract error: {0}")]
    Contract(String),
    /// A mathematical invariant failed; always signals a bug or injected fault.
    #[error("invariant violation: {0}")]
    Invariant(String),
    /// A test-function system could not be built as specified.
    #[error("construction error: {0}")]
    Construction(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

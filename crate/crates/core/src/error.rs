use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("combined support of {found} nodes exceeds the exact-solver limit of {limit}")]
    SupportTooLarge { found: usize, limit: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

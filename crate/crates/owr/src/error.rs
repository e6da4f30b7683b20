//! Crate-wide error type.

use crate::dataset::ClassId;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the recognition engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input has length {got}, expected {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("non-finite value produced in {0}")]
    NonFinite(String),
    #[error("activation cache does not match the network: {0}")]
    StaleCache(String),
    #[error("unknown class id `{0}`")]
    MissingClass(ClassId),
    #[error("model has no known classes")]
    EmptyModel,
    #[error("{0}")]
    EmptyData(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("synthetic data generation failed: {0}")]
    Generation(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("class `{0}` already present in exemplar memory")]
    DuplicateClass(ClassId),
    #[error("oracle pool exhausted for class `{0}`")]
    ExhaustedPool(ClassId),
    #[error("oracle cannot identify the queried sample")]
    OracleLookup,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit-code class used by the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}

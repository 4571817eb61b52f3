use std::io;

use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum DeepKeyError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in tensor `{0}`")]
    Numeric(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed request: {0}")]
    Request(String),
    #[error("model container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = DeepKeyError> = std::result::Result<T, E>;

use thiserror::Error;

/// Errors across the data, knowledge, model, training, and evaluation stages.
#[derive(Error, Debug)]
pub enum CoreError {
    /// Malformed input file (schema violation, bad JSON, bad tensor ref).
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    /// Structurally valid input that violates a dataset invariant.
    #[error("integrity error in {context}: {message}")]
    Integrity { context: String, message: String },
    /// Missing or inconsistent payload data at run time.
    #[error("data error: {0}")]
    Data(String),
    /// Invalid configuration or mismatched artifacts.
    #[error("config error: {0}")]
    Config(String),
    /// Numeric failure (NaN loss, failed gradient check).
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] stket_autograd::TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn integrity(context: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Integrity {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;

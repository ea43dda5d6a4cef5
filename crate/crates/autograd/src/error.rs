use thiserror::Error;

/// Errors produced by tensor construction, tape ops, and tensor file IO.
#[derive(Error, Debug)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for buffer of {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("tensor file format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

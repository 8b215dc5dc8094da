//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor, operator, model, and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("model parameters infeasible: {0}")]
    InfeasibleParams(String),

    #[error("IDX magic mismatch: expected 0x{expected:08x}, got 0x{got:08x}")]
    IdxMagic { expected: u32, got: u32 },

    #[error("IDX element type 0x{0:02x} not supported (only unsigned byte, 0x08)")]
    IdxElementType(u8),

    #[error("IDX payload truncated: header promises {expected} bytes, file holds {got}")]
    IdxTruncated { expected: usize, got: usize },

    #[error("checkpoint magic mismatch: expected {expected:?}, got {got:?}")]
    CheckpointMagic { expected: String, got: String },

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(context: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({left} vs {right})")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: non-positive output dimensions")]
    EmptyOutput { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("image decode error in {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a shape or geometry precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// An integer-mode lifting update left the signed 16-bit latent range.
    #[error("latent overflow: value {value} outside signed 16-bit range at {site}")]
    Overflow { value: f32, site: String },

    #[error("unsupported image geometry: {0}")]
    Geometry(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("model hash mismatch: container expects {expected:016x}, model is {actual:016x}")]
    ModelMismatch { expected: u64, actual: u64 },

    #[error("truncated stream: {0}")]
    Truncated(String),

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("autodiff misuse: {0}")]
    Autodiff(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

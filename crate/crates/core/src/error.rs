//! Error types shared across the library.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes are inconsistent.
    #[error("shape error: {0}")]
    Shape(String),

    /// A graph leaf was evaluated without a bound value.
    #[error("unbound leaf '{0}'")]
    UnboundLeaf(String),

    /// A gradient was requested of a non-scalar root node.
    #[error("gradient root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    /// A saliency or gradient-difference vector has (numerically) zero norm.
    #[error("degenerate saliency: {0}")]
    DegenerateSaliency(String),

    /// A configuration value is invalid.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A binary payload (IDX file, checkpoint) failed to parse.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Training diverged or was otherwise aborted.
    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MvqError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("file declares zero frames (byte offset {offset})")]
    ZeroFrames { offset: usize },

    #[error("non-finite flow value in frame {frame}, pixel {pixel}")]
    NonFiniteFlow { frame: usize, pixel: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("non-finite state at frame {frame}: {detail}")]
    NonFiniteState { frame: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MvqError>;

pub(crate) fn mismatch(msg: impl Into<String>) -> MvqError {
    MvqError::DimensionMismatch(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> MvqError {
    MvqError::InvalidParameter(msg.into())
}

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer geometry does not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// A caller-supplied value violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Configuration file or override problem.
    #[error("config error: {0}")]
    Config(String),
    /// WAV parsing or encoding problem.
    #[error("wav error: {0}")]
    Wav(String),
    /// Dataset manifest problem.
    #[error("manifest error: {0}")]
    Manifest(String),
    /// Checkpoint serialization problem.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

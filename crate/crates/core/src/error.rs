use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A token sequence does not match any prompt template.
    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),

    /// An image token sequence has the wrong length for the target grid.
    #[error("length mismatch: expected {expected} image tokens, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// A gradient component came out NaN or infinite.
    #[error("non-finite gradient at component {0}")]
    NonFiniteGradient(usize),

    /// A checkpoint's vocabulary hash or parameter checksum does not match.
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    /// Filesystem failure.
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),

    /// A structured-text document failed to parse.
    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

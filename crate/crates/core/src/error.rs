use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A token id outside the vocabulary was passed to a policy operation.
    #[error("invalid token id {id} for vocabulary of size {vocab_size}")]
    InvalidToken { id: usize, vocab_size: usize },

    /// A computation produced or would produce non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// A checkpoint file failed to parse; `line` is 1-based.
    #[error("checkpoint parse error at line {line}: {message}")]
    CheckpointParse { line: usize, message: String },

    /// One or more manifest records were rejected.
    #[error("manifest load failed:\n{}", errors.join("\n"))]
    ManifestLoad { errors: Vec<String> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

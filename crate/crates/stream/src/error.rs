use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: unknown variant id '{variant}' (session already tracks two)")]
    UnknownVariant { line: usize, variant: String },

    #[error("state file: {0}")]
    State(String),

    #[error(transparent)]
    Core(#[from] seqscore_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StreamError>;

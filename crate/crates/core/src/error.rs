use thiserror::Error;

/// Errors produced anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no score recorded yet")]
    NoEstimate,

    #[error("unknown task index {index} (instance has {count} tasks)")]
    UnknownTask { index: usize, count: usize },

    #[error("action {action} out of range for union action space of size {count}")]
    InvalidAction { action: usize, count: usize },

    #[error("step called on a finished episode")]
    EpisodeFinished,

    #[error("step called before reset")]
    NotReset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { step: usize, what: &'static str },

    #[error("task {0} has never been pulled")]
    Unpulled(usize),

    #[error("runs are not comparable: {0}")]
    Incomparable(String),

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Validation { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

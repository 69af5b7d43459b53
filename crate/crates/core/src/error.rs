use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: invalid record: {message}")]
    Validation { line: u64, message: String },

    #[error("line {line}: conflicting duplicate of line {first_line} for key {key}: loss {first_loss} vs {loss}")]
    Conflict {
        line: u64,
        first_line: u64,
        key: String,
        first_loss: f64,
        loss: f64,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("underdetermined fit: {points} points, need at least {required}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Underdetermined {
        points: usize,
        required: usize,
        context: Option<String>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used to pick a process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) => ErrorClass::Usage,
            Error::Numerical(_) => ErrorClass::Numerical,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Conflict { .. }
            | Error::Underdetermined { .. }
            | Error::Schema(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Data,
        }
    }
}

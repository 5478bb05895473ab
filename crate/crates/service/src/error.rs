use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session with id {id:?}")]
    NotFound { id: String },
    #[error("{message}")]
    Conflict { message: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: unreadable session file: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
}

impl ServiceError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.to_owned(), source }
    }

    /// Stable machine-readable code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Conflict { .. } => "conflict",
            ServiceError::InvalidInput(_) => "invalid_input",
            ServiceError::Io { .. } => "io_error",
            ServiceError::Corrupt { .. } => "corrupt_session",
        }
    }
}

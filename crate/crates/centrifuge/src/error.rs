use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid clip: {}", .0.join("; "))]
    InvalidClip(Vec<String>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("training diverged at step {step} (loss = {loss}); diagnostic checkpoint at {checkpoint:?}")]
    Diverged {
        step: u64,
        loss: f64,
        checkpoint: Option<PathBuf>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error on {path}: {reason}")]
    Png { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// User/config errors map to process exit code 2, everything else to 1.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::InvalidClip(_)
                | Error::InvalidConfig(_)
                | Error::InvalidInput(_)
                | Error::Json(_)
        )
    }
}

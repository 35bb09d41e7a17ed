use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input that does not fit the model or operation (wrong length, bad label).
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// Configuration that can never be satisfied.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checksum mismatch in {}", .0.display())]
    Checksum(PathBuf),

    #[error("malformed checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A scored example was also trained on.
    #[error("evaluation audit failed: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Usage and configuration problems, as opposed to failures during a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidInput(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

use metareward_core::Error as CoreError;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// Process exit code: 2 for configuration and input problems, 3 for
    /// numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(CoreError::Numeric(_)) => 3,
            Error::Core(CoreError::Config(_) | CoreError::Usage(_)) => 2,
            Error::Core(_) => 1,
            Error::Io { .. } | Error::Format { .. } | Error::Csv(_) | Error::Json(_) => 2,
        }
    }
}

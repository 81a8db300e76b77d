use std::path::{Path, PathBuf};

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] ptylab_core::Error),
    #[error("checkpoint refused: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("http: {0}")]
    Http(String),
    #[error("usage: {0}")]
    Usage(String),
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 1 for usage errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            _ => 2,
        }
    }
}

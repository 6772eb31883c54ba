use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] pmor::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A stage ran without the artifact an earlier stage should have produced.
    #[error("pipeline: {0}")]
    Pipeline(String),
    #[error("undefined metric: {0}")]
    Metric(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

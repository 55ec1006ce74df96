use std::path::PathBuf;

/// Failures of the experiment runner, mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] ksc_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    /// 1 for configuration and runtime errors, 2 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::path::PathBuf;

use mpnp_core::CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Arguments, config keys or paths rejected before any work starts.
    #[error("{0}")]
    Invalid(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for validation failures, 2 for errors met while doing the work.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::GradCheck(_) | CliError::Core(CoreError::Config(_)) => 1,
            CliError::Io { .. } | CliError::Core(_) => 2,
        }
    }
}

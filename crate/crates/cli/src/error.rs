use std::path::PathBuf;

use meq_core::MeqError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Core(MeqError),
}

impl From<MeqError> for CliError {
    fn from(e: MeqError) -> Self {
        match e {
            MeqError::NotConverged { .. } => CliError::NotConverged(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for non-convergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Config(msg.into()))
}

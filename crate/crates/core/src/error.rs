use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeqError {
    #[error("empty matching")]
    EmptyMatching,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("rank deficiency: information matrix is singular along {direction}")]
    RankDeficient { direction: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("equilibrium did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, MeqError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(MeqError::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(MeqError::Config(msg.into()))
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("schedule selects {selected} devices but capacity is {capacity}")]
    InvalidSchedule { selected: usize, capacity: usize },

    #[error("scheduler `{0}` needs the per-device backlog n, which is not observable")]
    MissingStateInfo(String),

    #[error("local gradient of device {device} is not finite")]
    NonFiniteGradient { device: usize },

    #[error("aggregation weight denominator is zero")]
    ZeroDenominator,

    #[error("instance too large for the exact oracle: {0}")]
    TooLarge(String),

    #[error("value iteration did not converge after {iterations} iterations (span {span:e})")]
    NoConvergence { iterations: usize, span: f64 },

    #[error("induced Markov chain is not unichain")]
    SingularChain,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator, trust models and I/O layer.
///
/// The I/O variants display only the path; the cause is their `source()`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("graph construction failed: {0}")]
    Construction(String),

    #[error("invalid state transition: {0}")]
    State(String),

    #[error("index {index} is not in {set}")]
    Index { index: usize, set: &'static str },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("no provider available to choose from")]
    Availability,

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

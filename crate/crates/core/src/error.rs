use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Loaded data violates a schema or invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A corpus or sample file line failed to parse.
    #[error("{path}: line {line}: field `{field}`: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    /// Binary framing or checkpoint decoding failure.
    #[error("codec error: {0}")]
    Codec(String),

    /// Training blew up.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn codec(msg: impl Into<String>) -> Self {
        Error::Codec(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

/// Errors shared across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (bad token, empty row, ...); carries the 1-based line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A setting that cannot be honored (unknown class id, missing file, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Numerical failure (singular matrix, non-finite value, divergence).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A metric that is undefined for the given inputs.
    #[error("metric error: {0}")]
    Metric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

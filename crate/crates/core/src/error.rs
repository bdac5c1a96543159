use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid settings: missing columns, unknown feature names, empty grids.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that violates a documented file contract.
    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A statistic that has no value for the given input (all-zero counts,
    /// zero variance).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    /// Network failure that may succeed when retried.
    #[error("request failed after {attempts} attempts: {message}")]
    Retryable { attempts: u32, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: PathBuf::from("<stream>"),
                source,
            },
            kind => Error::Data(format!("{kind:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Data(err.to_string())
    }
}

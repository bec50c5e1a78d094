use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside an operation's domain (bad distance, level, etc.).
    #[error("domain error: {0}")]
    Domain(String),

    /// A decision backend failed after exhausting its retries.
    #[error("backend failure: {0}")]
    Backend(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("could not parse {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of a pure operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A trace is missing an address or refers to one that does not exist.
    #[error("trace structure: {0}")]
    Structure(String),

    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("resource exhausted: {0}")]
    Resource(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

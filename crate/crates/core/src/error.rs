use thiserror::Error;

/// Errors raised by the library. The CLI maps `is_validation()` errors to exit
/// code 2 and everything else to exit code 3.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid word: symbol {symbol} at position {position} is outside the alphabet of size {alphabet}")]
    InvalidWord {
        symbol: usize,
        position: usize,
        alphabet: usize,
    },
    #[error("empty word")]
    EmptyWord,
    #[error("invalid input at `{path}`: {msg}")]
    Invalid { path: String, msg: String },
    #[error("invalid entropy sequence: {0}")]
    InvalidEntropy(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("not contracting: {0}")]
    NotContracting(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Invalid {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Prepend `prefix` to the path of an `Invalid` error.
    pub fn prefixed(self, prefix: &str) -> Self {
        match self {
            Error::Invalid { path, msg } => Error::Invalid {
                path: if path.is_empty() {
                    prefix.to_string()
                } else {
                    format!("{prefix}.{path}")
                },
                msg,
            },
            other => other,
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidWord { .. }
                | Error::EmptyWord
                | Error::Invalid { .. }
                | Error::InvalidEntropy(_)
                | Error::Precondition(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

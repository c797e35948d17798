use thiserror::Error;

/// Errors raised by the re-ranking library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (lengths, ranges, permutations).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A configuration value is out of its allowed domain.
    #[error("configuration error: {0}")]
    Config(String),
    /// A loss or parameter became NaN or infinite.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A dataset or checkpoint record could not be parsed.
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

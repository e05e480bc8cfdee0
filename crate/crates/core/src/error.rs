use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or graph-structure violation (dimension mismatch, cyclic graph).
    #[error("structural error: {0}")]
    Structural(String),

    /// Non-finite values, failed factorizations and similar numerical breakdowns.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Dataset content that cannot be used (constant columns, empty files, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A cell that could not be parsed as a number.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// Invalid configuration (unknown column, bad key, ...).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::Numeric(msg.into())
}

pub(crate) fn parameter(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameters that cannot describe a valid procedure (K > n, τ outside (0,1), ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Input data that violates a container invariant.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A CSV column could not be parsed as a number.
    #[error("column `{column}` is not numeric (row {row}: {value:?})")]
    NonNumericColumn {
        column: String,
        row: usize,
        value: String,
    },

    /// The requested target column is not present in the header.
    #[error("target column `{0}` not found")]
    MissingColumn(String),

    /// A linear-algebra routine failed to produce a finite answer.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

pub(crate) fn invalid_data(msg: impl Into<String>) -> Error {
    Error::InvalidData(msg.into())
}

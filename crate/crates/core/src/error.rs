//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, malformed configuration, unknown keys or model kinds.
    #[error("usage: {0}")]
    Usage(String),

    /// Missing column in a CSV header or schema.
    #[error("missing required column '{0}'")]
    MissingColumn(String),

    /// A cell could not be parsed; `row` is the 1-based data row.
    #[error("row {row}: column '{column}': cannot parse '{value}' as a number")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },

    /// Anything else wrong with the data (empty dataset, shape mismatch, ...).
    #[error("data: {0}")]
    Data(String),

    /// A numerical routine failed (non-finite loss, Cholesky breakdown, ...).
    #[error("numerical: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("model file: {0}")]
    Persist(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::MissingColumn(_)
            | Error::ParseCell { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Persist(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

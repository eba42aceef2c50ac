//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problems with inputs: shape mismatches, non-binary labels,
    /// out-of-range indices, malformed schema or CSV content.
    #[error("{0}")]
    Invalid(String),

    /// File-level failure while reading or writing data.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// CSV parsing failure.
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Numerical failure that survived the built-in retries, such as a
    /// singular system or an iteration with no usable candidate.
    #[error("{0}")]
    Numerical(String),
}

impl Error {
    /// Whether this error describes bad input data rather than a numerical
    /// breakdown. The command line maps the two classes to different exit
    /// codes.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::Numerical(msg.into())
}

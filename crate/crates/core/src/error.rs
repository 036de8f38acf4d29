//! Crate-wide error type.

/// Errors raised by the forecasting pipeline.
///
/// The variants are grouped by failure class so that callers (notably the
/// command-line binary) can map them onto coarse exit codes: data and parse
/// problems are recoverable input errors, while numerical failures indicate
/// that a computation could not be carried out on valid-looking input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or inconsistent input data (missing days, incomplete hours,
    /// non-finite prices, and similar).
    #[error("data error: {0}")]
    Data(String),

    /// Text that could not be parsed (input records, fit files, manifests).
    #[error("parse error: {0}")]
    Parse(String),

    /// A parameter outside its admissible region (probabilities off the
    /// simplex, non-positive scales, correlations outside (-1, 1), ...).
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Numerical failure: singular covariance, non-finite objective,
    /// optimizer breakdown.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Structurally incompatible objects (mismatched design layouts,
    /// mismatched dimensions, wrong history lengths).
    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the input data or its on-disk form.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Data(_) | Error::Parse(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

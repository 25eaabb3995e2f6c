use thiserror::Error;

/// Errors produced by the spectral pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid format in {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("degenerate value range: {0}")]
    DegenerateRange(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss in term `{term}` (value {value})")]
    NonFinite { term: String, value: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

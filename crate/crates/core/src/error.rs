use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("iteration limit of {limit} reached: {context}")]
    IterationLimit { limit: usize, context: String },

    #[error("{what} {point:?} lies outside the table range")]
    Extrapolation { what: &'static str, point: Vec<f64> },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bins do not cover atom {index} at {position:?}")]
    Coverage { index: usize, position: Vec<f64> },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the library.
///
/// [`Error::is_validation`] separates bad input from numerical trouble; the
/// command-line driver maps the two groups onto different exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("argument outside the admissible domain: {0}")]
    Domain(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("root finding failed: {0}")]
    Root(String),
    #[error("integration failed at x = {at:e}: {reason}")]
    Integration { at: f64, reason: String },
    #[error("solution reached the upper bound u_bar = {u_bar} at r = {r:e}")]
    ReachedUpperBound { u_bar: f64, r: f64 },
    #[error("limit not detected: {0}")]
    LimitNotDetected(String),
    #[error("undetermined: {0}")]
    Undetermined(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("range too short, extend it: {0}")]
    ExtendRange(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidParams(_) | Error::Domain(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParams(msg.into())
}

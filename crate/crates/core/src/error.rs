use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix equation: {0}")]
    Singular(String),

    #[error("unstable scheme: {0}")]
    Unstable(String),

    #[error("dt too large: {0}")]
    LogUndefined(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("error saturated at {0:e}; use larger step sizes")]
    Saturated(f64),

    #[error("quadrature did not converge (achieved error {achieved:e}, tolerance {tol:e})")]
    Quadrature { achieved: f64, tol: f64 },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures caused by numerics rather than by inputs or data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::Unstable(_)
                | Error::LogUndefined(_)
                | Error::NonFinite(_)
                | Error::Quadrature { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

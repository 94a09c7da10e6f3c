use std::collections::BTreeMap;

use thiserror::Error;

/// Named residuals attached to numeric failures so callers can dump them.
pub type Residuals = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// A query point lies outside the region where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The economic model violates a structural assumption (monotonicity, convexity, ...).
    #[error("model error: {0}")]
    Model(String),

    /// A gradient is unbounded at a boundary point.
    #[error("boundary gradient unbounded at coordinate {coordinate}")]
    BoundaryGradient { coordinate: usize },

    /// An iterative method failed to converge or a certificate failed its residual checks.
    #[error("numeric failure: {message}")]
    Numeric { message: String, residuals: Residuals },

    /// The request is outside the supported regime of a closed form or transform.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric { message: message.into(), residuals: Residuals::new() }
    }

    pub fn numeric_with<I, K>(message: impl Into<String>, residuals: I) -> Self
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<String>,
    {
        Error::Numeric {
            message: message.into(),
            residuals: residuals.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

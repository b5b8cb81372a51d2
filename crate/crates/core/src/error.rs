use thiserror::Error;

/// Errors raised by the optimizers, estimators and verifiers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension must be positive")]
    ZeroDimension,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite iterate at step {step}")]
    NonFinite { step: usize },

    #[error("oracle does not expose a gradient query")]
    MissingGradient,

    #[error("instance carries no truth view")]
    MissingTruth,

    #[error("non-finite derivative at the verification point")]
    NonFiniteDerivative,

    #[error("eigenvalue iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("cover of {size} elements exceeds the cap of {cap}")]
    CoverTooLarge { size: f64, cap: usize },

    #[error("probe system is ill-conditioned (condition {condition:.3e}); use a denser sphere cover")]
    IllConditioned { condition: f64 },

    #[error("search exhausted {points} cover points without acceptance; check the declared B, ell, rho and nu")]
    SearchExhausted { points: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

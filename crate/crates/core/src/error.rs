use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix M is singular (smallest singular value {sigma_min:e})")]
    SingularMatrix { sigma_min: f64 },

    #[error("iterate diverged at t = {t} (max |coordinate| = {max_abs:e})")]
    Diverged { t: usize, max_abs: f64 },

    #[error("step size {eta} at t = {t} violates {requirement}")]
    StepSize {
        t: usize,
        eta: f64,
        requirement: String,
    },

    #[error("implicit step at t = {t} did not converge in {iterations} inner iterations (residual {residual:e})")]
    InnerSolve {
        t: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("gap region is not centred at the saddle point (offset {offset:e})")]
    RegionNotCentered { offset: f64 },

    #[error("1-SCLI spec is not consistent (coefficient residual {residual:e})")]
    InconsistentSpec { residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-positive loss at horizons {horizons:?}")]
    NonPositiveLoss { horizons: Vec<usize> },

    #[error("quadrature did not stabilise with {panels} panels (change {change:e})")]
    Quadrature { panels: usize, change: f64 },

    #[error("operator has no Jacobian and finite differences are disabled")]
    MissingJacobian,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

use thiserror::Error;

use crate::imaging::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("dataset has no {0:?} images")]
    MissingClass(Label),

    #[error("need at least {needed} samples for {what}, found {found}")]
    InsufficientSamples {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("covariance is not positive definite: d^T K d = {curvature:e} at iteration {iteration}")]
    NonPositiveCurvature { iteration: usize, curvature: f64 },

    #[error("{what} is numerically singular (condition estimate {condition_estimate:e})")]
    Singular {
        what: &'static str,
        condition_estimate: f64,
    },

    #[error("degenerate data: zero direction at component {component}")]
    DegenerateDirection { component: usize },

    #[error("pooled score variance is zero")]
    ZeroVariance,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed artifact {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

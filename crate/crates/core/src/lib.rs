//! Efficient channels for binary signal detection.
//!
//! The crate builds low-dimensional channel banks from the residuals of a
//! conjugate-gradient solve of the Hotelling system `K w = Δg`, and uses them
//! to compute channelized Hotelling and channelized ideal observers on
//! simulated lumpy-background images. Full-data reference observers (a dense
//! Hotelling solve and an MCMC ideal observer) are provided for validation.
//!
//! Module map:
//!
//! * [`task`]: stochastic object models (Type-I lumpy background, Gaussian
//!   mixture signal) and object-state sampling.
//! * [`imaging`]: analytic Gaussian continuous-to-discrete imaging, noise and
//!   labeled dataset generation.
//! * [`statistics`]: mean differences, pooled sample covariances and
//!   covariance-matrix-decomposition (CMD) estimates.
//! * [`channels`]: CG / CG-CMD / PLS channel banks, channelization and
//!   orthonormality diagnostics.
//! * [`observers`]: Hotelling, channelized Hotelling, BKE likelihood ratio and
//!   MCMC ideal / channelized ideal observers.
//! * [`evaluation`]: ROC / AUC, bootstrap standard errors and `SNR_t`.
//! * [`persist`]: raw-array + JSON sidecar artifact files.

pub mod channels;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod linalg;
pub mod observers;
pub mod persist;
pub mod rng;
pub mod statistics;
pub mod task;

pub use error::{Error, Result};

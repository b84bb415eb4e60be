//! Model observers for the SKE/BKS lumpy-background task.
//!
//! * [`hotelling_template`]: reference Hotelling observer by dense solve.
//! * [`cho_template`] / [`cho_template_exact`]: channelized Hotelling.
//! * [`bke_log_likelihood_ratio`]: closed-form likelihood ratio for a known
//!   background under i.i.d. Gaussian noise.
//! * [`IdealObserver`]: MCMC estimate of the (channelized) ideal observer,
//!   averaging the BKE likelihood ratio over the background posterior.

mod likelihood;
mod linear;
mod mcmc;

pub use likelihood::bke_log_likelihood_ratio;
pub use linear::{
    apply_linear, back_project, cho_template, cho_template_exact, exact_snr, hotelling_template,
    LinearTemplate, TemplateSpace,
};
pub use mcmc::{
    mcmc_cio_statistic, mcmc_io_statistic, ChainStart, ChainSummary, IdealObserver, McmcConfig,
    ProposalConfig,
};

use serde::{Deserialize, Serialize};

use crate::imaging::Label;
use crate::{Error, Result};

/// Test statistics split by true hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverScores {
    pub observer_id: String,
    pub t_h0: Vec<f64>,
    pub t_h1: Vec<f64>,
}

impl ObserverScores {
    pub fn new(observer_id: impl Into<String>, t_h0: Vec<f64>, t_h1: Vec<f64>) -> Self {
        Self {
            observer_id: observer_id.into(),
            t_h0,
            t_h1,
        }
    }

    /// Splits per-image scores by label; unlabeled images are rejected.
    pub fn from_labeled(observer_id: impl Into<String>, scores: &[f64], labels: &[Label]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "scores vs labels",
                expected: labels.len(),
                found: scores.len(),
            });
        }
        let mut t_h0 = Vec::new();
        let mut t_h1 = Vec::new();
        for (&t, &l) in scores.iter().zip(labels) {
            match l {
                Label::H0 => t_h0.push(t),
                Label::H1 => t_h1.push(t),
                Label::Unlabeled => {
                    return Err(Error::InvalidParameter("cannot score unlabeled images".into()))
                }
            }
        }
        Ok(Self::new(observer_id, t_h0, t_h1))
    }
}

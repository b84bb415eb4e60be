//! Conjugate-gradient channel construction.
//!
//! CG on `l(w) = ½ wᵀ K w - Δgᵀ w` produces mutually orthogonal residuals
//! `r_(i) = Δg - K w_(i)`; normalized, they are the channels. Finite
//! precision erodes that orthogonality, so each new residual is checked
//! against all earlier ones and swept with modified Gram-Schmidt when the
//! largest normalized overlap exceeds `tau_orth`. The direction update then
//! uses the corrected residual.
//!
//! Indexing: `t_0 = r_(0)/‖r_(0)‖` is emitted before the first update and a
//! request for `D` channels returns `t_0 … t_(D-1)`. The solver still runs
//! `D` template updates, so the logged template is `w_(D)`.

use nalgebra::{DMatrix, DVector};

use super::{BuildLog, ChannelBank, ChannelMethod, IterationRecord};
use crate::statistics::{CovarianceModel, CovarianceProvenance, MeanDifference};
use crate::{Error, Result};

/// Relative residual `‖r‖ / ‖r_(0)‖` at which the iteration stops.
pub const CONVERGENCE_RTOL: f64 = 1e-12;

/// Iterate of the CG process.
#[derive(Debug, Clone, PartialEq)]
pub struct CgState {
    pub w: DVector<f64>,
    pub r: DVector<f64>,
    pub d: DVector<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// A new residual `r_(i+1)` was accepted.
    Advanced(IterationRecord),
    /// `‖r_(i+1)‖` underflowed; the template is final.
    Converged(IterationRecord),
}

/// Step-by-step CG solver that keeps every accepted residual.
pub struct ConjugateGradient<'a> {
    k: &'a DMatrix<f64>,
    delta: &'a DVector<f64>,
    state: CgState,
    rr: f64,
    r0_norm: f64,
    residuals: Vec<DVector<f64>>,
    residual_sq: Vec<f64>,
    tau_orth: Option<f64>,
    converged: bool,
}

impl<'a> ConjugateGradient<'a> {
    /// Starts from `w_(0) = 0`, `r_(0) = d_(0) = Δg`.
    pub fn new(k: &'a DMatrix<f64>, delta: &'a DVector<f64>, tau_orth: Option<f64>) -> Result<Self> {
        if !k.is_square() || k.nrows() != delta.len() {
            return Err(Error::DimensionMismatch {
                what: "covariance vs mean difference",
                expected: delta.len(),
                found: k.nrows(),
            });
        }
        if let Some(tau) = tau_orth {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "tau_orth must lie in (0, 1), got {tau}"
                )));
            }
        }
        let r0_norm = delta.norm();
        if !(r0_norm > 0.0 && r0_norm.is_finite()) {
            return Err(Error::InvalidParameter(
                "mean-difference vector must be nonzero and finite".into(),
            ));
        }
        let r = delta.clone();
        Ok(Self {
            k,
            delta,
            state: CgState {
                w: DVector::zeros(delta.len()),
                d: r.clone(),
                r: r.clone(),
                iteration: 0,
            },
            rr: r0_norm * r0_norm,
            r0_norm,
            residual_sq: vec![r0_norm * r0_norm],
            residuals: vec![r],
            tau_orth,
            converged: false,
        })
    }

    pub fn state(&self) -> &CgState {
        &self.state
    }

    pub fn residuals(&self) -> &[DVector<f64>] {
        &self.residuals
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    /// One pass of the template / residual / direction update.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.converged {
            return Err(Error::InvalidParameter("CG process already converged".into()));
        }
        let i = self.state.iteration;
        let kd = self.k * &self.state.d;
        let curvature = self.state.d.dot(&kd);
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(Error::NonPositiveCurvature {
                iteration: i,
                curvature,
            });
        }
        let alpha = self.rr / curvature;
        self.state.w.axpy(alpha, &self.state.d, 1.0);
        self.state.r.axpy(-alpha, &kd, 1.0);
        self.state.iteration = i + 1;

        let norm = self.state.r.norm();
        if norm / self.r0_norm < CONVERGENCE_RTOL {
            self.converged = true;
            return Ok(StepOutcome::Converged(IterationRecord {
                iteration: i,
                alpha,
                beta: None,
                residual_norm: norm,
                max_overlap: 0.0,
                reorthogonalized: false,
                loss: self.loss(),
            }));
        }

        let max_overlap = self
            .residuals
            .iter()
            .zip(&self.residual_sq)
            .map(|(rj, sq)| rj.dot(&self.state.r).abs() / (sq.sqrt() * norm))
            .fold(0.0f64, f64::max);
        let reorthogonalized = self.tau_orth.is_some_and(|tau| max_overlap > tau);
        if reorthogonalized {
            for (rj, sq) in self.residuals.iter().zip(&self.residual_sq) {
                let c = rj.dot(&self.state.r) / sq;
                self.state.r.axpy(-c, rj, 1.0);
            }
        }

        let rr_next = self.state.r.norm_squared();
        let beta = rr_next / self.rr;
        self.state.d.axpy(1.0, &self.state.r, beta);
        self.rr = rr_next;
        self.residuals.push(self.state.r.clone());
        self.residual_sq.push(rr_next);

        Ok(StepOutcome::Advanced(IterationRecord {
            iteration: i,
            alpha,
            beta: Some(beta),
            residual_norm: rr_next.sqrt(),
            max_overlap,
            reorthogonalized,
            loss: self.loss(),
        }))
    }

    /// `l(w) = -½ wᵀ(Δg + r)`, using `K w = Δg - r`.
    fn loss(&self) -> f64 {
        -0.5 * self.state.w.dot(&(self.delta + &self.state.r))
    }

    pub fn into_state(self) -> CgState {
        self.state
    }
}

/// Builds up to `num_channels` CG channels from `K` and `Δg`.
///
/// `tau_orth = None` disables re-orthogonalization. If the residual
/// underflows before enough channels exist, the bank is returned short with
/// `log.truncated` set rather than padded.
pub fn build_cg_channels(
    k: &CovarianceModel,
    delta: &MeanDifference,
    num_channels: usize,
    tau_orth: Option<f64>,
) -> Result<ChannelBank> {
    let m = delta.len();
    if num_channels == 0 || num_channels > m {
        return Err(Error::InvalidParameter(format!(
            "channel count must lie in 1..={m}, got {num_channels}"
        )));
    }
    let mut cg = ConjugateGradient::new(&k.matrix, &delta.vector, tau_orth)?;
    let mut log = BuildLog {
        requested: num_channels,
        note: format!(
            "channels t_0..t_{{D-1}} from residuals r_0..r_{{D-1}}; {num_channels} template updates"
        ),
        ..BuildLog::default()
    };
    for _ in 0..num_channels {
        match cg.step()? {
            StepOutcome::Advanced(rec) => log.iterations.push(rec),
            StepOutcome::Converged(rec) => {
                log.iterations.push(rec);
                log.converged_early = true;
                break;
            }
        }
    }
    let count = cg.residuals().len().min(num_channels);
    let mut matrix = DMatrix::zeros(count, m);
    for (i, r) in cg.residuals().iter().take(count).enumerate() {
        matrix.set_row(i, &(r / r.norm()).transpose());
    }
    log.truncated = count < num_channels;
    if log.truncated {
        log::info!("CG converged after {count} channels (requested {num_channels})");
    }
    log.final_template = Some(cg.into_state().w);
    let method = match k.provenance {
        CovarianceProvenance::Cmd => ChannelMethod::CgCmd,
        CovarianceProvenance::Sample | CovarianceProvenance::Exact => ChannelMethod::Cg,
    };
    Ok(ChannelBank {
        matrix,
        method,
        tau_orth,
        log,
    })
}

//! First- and second-order image statistics.
//!
//! Covariances are dense `M x M` matrices. For the binary task the pooled
//! intraclass form `½(K̂₀ + K̂₁)` is used, each class centered on its own mean
//! and normalized by `n_j - 1`. The CMD estimate replaces the sample
//! covariance of noisy images with `σ² I + K̂_b`, where `K̂_b` is the sample
//! covariance of noiseless background images.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::imaging::{ImageVector, Label, LabeledDataset, NoiseModel};
use crate::linalg::symmetrize;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceProvenance {
    Sample,
    Cmd,
    /// Supplied analytically (synthetic systems, exact-statistics mode).
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub matrix: DMatrix<f64>,
    pub provenance: CovarianceProvenance,
    pub n_samples: usize,
    /// `σ²` of the `σ² I` noise term, when the model carries one.
    pub noise_variance: Option<f64>,
}

impl CovarianceModel {
    /// Wraps a known covariance matrix.
    pub fn exact(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                what: "covariance columns",
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        Ok(Self {
            matrix,
            provenance: CovarianceProvenance::Exact,
            n_samples: 0,
            noise_variance: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanDifferenceProvenance {
    KnownSignal,
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanDifference {
    pub vector: DVector<f64>,
    pub provenance: MeanDifferenceProvenance,
}

impl MeanDifference {
    /// SKE shortcut: the known signal image is the mean difference.
    pub fn known_signal(signal: &ImageVector) -> Self {
        Self {
            vector: signal.values.clone(),
            provenance: MeanDifferenceProvenance::KnownSignal,
        }
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.column_mean()
}

/// `⟨g⟩₁ - ⟨g⟩₀` over a labeled dataset.
pub fn sample_mean_difference(dataset: &LabeledDataset) -> Result<MeanDifference> {
    for label in [Label::H0, Label::H1] {
        if dataset.count(label) == 0 {
            return Err(Error::MissingClass(label));
        }
    }
    let m1 = column_mean(&dataset.class_pixels(Label::H1));
    let m0 = column_mean(&dataset.class_pixels(Label::H0));
    Ok(MeanDifference {
        vector: m1 - m0,
        provenance: MeanDifferenceProvenance::Empirical,
    })
}

const CHUNK: usize = 512;

/// Unbiased sample covariance of the columns of `x` (one image per column).
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<CovarianceModel> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            what: "sample covariance",
            needed: 2,
            found: n,
        });
    }
    let mean = column_mean(x);
    let mut acc = DMatrix::zeros(x.nrows(), x.nrows());
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        let mut block = x.columns(start, len).into_owned();
        for mut col in block.column_iter_mut() {
            col -= &mean;
        }
        acc.gemm(1.0, &block, &block.transpose(), 1.0);
        start += len;
    }
    acc /= (n - 1) as f64;
    symmetrize(&mut acc);
    Ok(CovarianceModel {
        matrix: acc,
        provenance: CovarianceProvenance::Sample,
        n_samples: n,
        noise_variance: None,
    })
}

/// Pooled intraclass covariance `½(K̂₀ + K̂₁)` with per-class centering.
pub fn pooled_covariance(dataset: &LabeledDataset) -> Result<CovarianceModel> {
    let mut parts = Vec::with_capacity(2);
    for label in [Label::H0, Label::H1] {
        let x = dataset.class_pixels(label);
        if x.ncols() < 2 {
            return Err(Error::InsufficientSamples {
                what: "pooled covariance (per class)",
                needed: 2,
                found: x.ncols(),
            });
        }
        parts.push(sample_covariance(&x)?.matrix);
    }
    let mut k = (&parts[0] + &parts[1]) * 0.5;
    symmetrize(&mut k);
    Ok(CovarianceModel {
        matrix: k,
        provenance: CovarianceProvenance::Sample,
        n_samples: dataset.len(),
        noise_variance: None,
    })
}

/// CMD covariance `σ² I + K̂_b` from noiseless backgrounds (one per column).
///
/// Only nonrandom signals are supported, for which the object-variability
/// term is `K_b` under both hypotheses.
pub fn cmd_covariance(
    backgrounds: &DMatrix<f64>,
    noise: Option<&NoiseModel>,
    signal_random: bool,
) -> Result<CovarianceModel> {
    let noise = noise.ok_or_else(|| {
        Error::InvalidParameter("CMD covariance requires a noise model".into())
    })?;
    noise.validate()?;
    if signal_random {
        return Err(Error::Unsupported(
            "CMD for random signals needs a signal covariance K_s".into(),
        ));
    }
    let mut kb = sample_covariance(backgrounds)?;
    let var = noise.variance();
    for i in 0..kb.matrix.nrows() {
        kb.matrix[(i, i)] += var;
    }
    kb.provenance = CovarianceProvenance::Cmd;
    kb.noise_variance = Some(var);
    Ok(kb)
}

/// Streaming covariance accumulator for image sets too large to hold.
///
/// Columns are accumulated relative to a fixed shift vector (ideally close
/// to the mean), which keeps the one-pass formula well conditioned.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    shift: DVector<f64>,
    sum: DVector<f64>,
    cross: DMatrix<f64>,
    n: usize,
}

impl CovarianceAccumulator {
    pub fn new(shift: DVector<f64>) -> Self {
        let m = shift.len();
        Self {
            shift,
            sum: DVector::zeros(m),
            cross: DMatrix::zeros(m, m),
            n: 0,
        }
    }

    pub fn push_columns(&mut self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.shift.len() {
            return Err(Error::DimensionMismatch {
                what: "accumulated images",
                expected: self.shift.len(),
                found: x.nrows(),
            });
        }
        let mut block = x.clone();
        for mut col in block.column_iter_mut() {
            col -= &self.shift;
        }
        self.sum += block.column_sum();
        self.cross.gemm(1.0, &block, &block.transpose(), 1.0);
        self.n += x.ncols();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.shift + &self.sum / self.n as f64
    }

    pub fn finish(self) -> Result<CovarianceModel> {
        if self.n < 2 {
            return Err(Error::InsufficientSamples {
                what: "sample covariance",
                needed: 2,
                found: self.n,
            });
        }
        let n = self.n as f64;
        let d = &self.sum / n;
        let mut k = (self.cross - (&d * d.transpose()) * n) / (n - 1.0);
        symmetrize(&mut k);
        Ok(CovarianceModel {
            matrix: k,
            provenance: CovarianceProvenance::Sample,
            n_samples: self.n,
            noise_variance: None,
        })
    }

    /// Adds `σ² I` and tags the result as a CMD estimate.
    pub fn finish_cmd(self, noise: &NoiseModel) -> Result<CovarianceModel> {
        let mut k = self.finish()?;
        let var = noise.variance();
        for i in 0..k.matrix.nrows() {
            k.matrix[(i, i)] += var;
        }
        k.provenance = CovarianceProvenance::Cmd;
        k.noise_variance = Some(var);
        Ok(k)
    }
}

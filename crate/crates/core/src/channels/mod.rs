//! Channel banks: construction, channelization and diagnostics.
//!
//! A bank is a `D x M` matrix `T` whose rows are channel vectors; an image
//! `g` is reduced to `v = T g`. CG and CG-CMD banks are built from the
//! normalized residuals of a conjugate-gradient solve of `K w = Δg` and are
//! orthonormal; PLS banks come from a supervised deflation iteration and are
//! only row-normalized.

mod cg;
mod pls;

pub use cg::{build_cg_channels, CgState, ConjugateGradient, StepOutcome, CONVERGENCE_RTOL};
pub use pls::build_pls_channels;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default re-orthogonalization trigger for CG banks.
pub const DEFAULT_TAU_ORTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMethod {
    Cg,
    CgCmd,
    Pls,
}

impl ChannelMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelMethod::Cg => "cg",
            ChannelMethod::CgCmd => "cg_cmd",
            ChannelMethod::Pls => "pls",
        }
    }
}

impl std::fmt::Display for ChannelMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChannelMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" => Ok(ChannelMethod::Cg),
            "cg_cmd" => Ok(ChannelMethod::CgCmd),
            "pls" => Ok(ChannelMethod::Pls),
            other => Err(Error::InvalidParameter(format!("unknown channel method {other:?}"))),
        }
    }
}

/// One CG iteration `i -> i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    /// `β_(i+1)`; absent on the converging step.
    pub beta: Option<f64>,
    /// `‖r_(i+1)‖` after any re-orthogonalization.
    pub residual_norm: f64,
    /// Largest normalized overlap of `r_(i+1)` with earlier residuals,
    /// measured before re-orthogonalization.
    pub max_overlap: f64,
    pub reorthogonalized: bool,
    /// Quadratic loss `½ wᵀ K w - Δgᵀ w` at `w_(i+1)`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildLog {
    pub requested: usize,
    pub iterations: Vec<IterationRecord>,
    /// The residual fell below the convergence tolerance.
    pub converged_early: bool,
    /// Fewer channels than requested were produced.
    pub truncated: bool,
    pub note: String,
    #[serde(skip)]
    pub final_template: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBank {
    /// `D x M`, one channel per row.
    pub matrix: DMatrix<f64>,
    pub method: ChannelMethod,
    pub tau_orth: Option<f64>,
    pub log: BuildLog,
}

impl ChannelBank {
    pub fn from_rows(matrix: DMatrix<f64>, method: ChannelMethod) -> Self {
        Self {
            matrix,
            method,
            tau_orth: None,
            log: BuildLog::default(),
        }
    }

    pub fn num_channels(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_pixels(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn channel(&self, i: usize) -> DVector<f64> {
        self.matrix.row(i).transpose()
    }

    /// The first `d` channels. CG and PLS channels are nested, so a prefix of
    /// a `D_max` bank equals a bank built for `d` directly.
    pub fn prefix(&self, d: usize) -> Result<ChannelBank> {
        if d == 0 || d > self.num_channels() {
            return Err(Error::InvalidParameter(format!(
                "cannot take {d} channels from a bank of {}",
                self.num_channels()
            )));
        }
        Ok(ChannelBank {
            matrix: self.matrix.rows(0, d).into_owned(),
            method: self.method,
            tau_orth: self.tau_orth,
            log: self.log.clone(),
        })
    }
}

/// `v = T g` for every column of `images`.
pub fn channelize(bank: &ChannelBank, images: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if images.nrows() != bank.num_pixels() {
        return Err(Error::DimensionMismatch {
            what: "channelized images",
            expected: bank.num_pixels(),
            found: images.nrows(),
        });
    }
    Ok(&bank.matrix * images)
}

pub fn channelize_vector(bank: &ChannelBank, image: &DVector<f64>) -> Result<DVector<f64>> {
    if image.len() != bank.num_pixels() {
        return Err(Error::DimensionMismatch {
            what: "channelized image",
            expected: bank.num_pixels(),
            found: image.len(),
        });
    }
    Ok(&bank.matrix * image)
}

/// Pairwise channel inner products `T Tᵀ`.
pub fn gram_matrix(bank: &ChannelBank) -> DMatrix<f64> {
    &bank.matrix * bank.matrix.transpose()
}

/// `(max off-diagonal |G_ij|, max diagonal |G_ii - 1|)`.
pub fn orthonormality_error(gram: &DMatrix<f64>) -> (f64, f64) {
    let mut off = 0.0f64;
    let mut diag = 0.0f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            if i == j {
                diag = diag.max((gram[(i, j)] - 1.0).abs());
            } else {
                off = off.max(gram[(i, j)].abs());
            }
        }
    }
    (off, diag)
}

/// Fraction of spectral energy of a `G x G` image above `cutoff` times the
/// Nyquist frequency (radially).
pub fn high_frequency_fraction(image: &[f64], grid: usize, cutoff: f64) -> f64 {
    assert_eq!(image.len(), grid * grid, "image is not {grid} x {grid}");
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(grid);
    let mut buf: Vec<Complex<f64>> = image.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_mut(grid) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); grid];
    for j in 0..grid {
        for i in 0..grid {
            col[i] = buf[i * grid + j];
        }
        fft.process(&mut col);
        for i in 0..grid {
            buf[i * grid + j] = col[i];
        }
    }
    let freq = |k: usize| {
        let k = if k <= grid / 2 { k as f64 } else { k as f64 - grid as f64 };
        k / grid as f64
    };
    let (mut total, mut high) = (0.0, 0.0);
    for i in 0..grid {
        for j in 0..grid {
            let e = buf[i * grid + j].norm_sqr();
            total += e;
            let radius = (freq(i).powi(2) + freq(j).powi(2)).sqrt() / 0.5;
            if radius > cutoff {
                high += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// Mean high-frequency fraction over the rows of a bank laid out on a grid.
pub fn bank_high_frequency_fraction(bank: &ChannelBank, grid: usize, cutoff: f64) -> f64 {
    let d = bank.num_channels();
    (0..d)
        .map(|i| {
            let row: Vec<f64> = bank.matrix.row(i).iter().copied().collect();
            high_frequency_fraction(&row, grid, cutoff)
        })
        .sum::<f64>()
        / d as f64
}

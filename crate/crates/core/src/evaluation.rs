//! ROC analysis: empirical AUC, bootstrap uncertainty and `SNR_t`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::observers::ObserverScores;
use crate::rng::{stream, Domain};
use crate::{Error, Result};

pub const DEFAULT_N_BOOT: usize = 1000;
pub const MIN_N_BOOT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub auc: f64,
    /// Standard deviation of the bootstrap AUCs.
    pub auc_stderr: Option<f64>,
    /// 95% percentile interval of the bootstrap AUCs.
    pub ci: Option<(f64, f64)>,
    /// 0 for a plain point estimate.
    pub n_boot: usize,
    /// Empirical operating points `(FPF, TPF)` from `(0, 0)` to `(1, 1)`.
    pub roc_points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub snr_t: f64,
}

fn check_scores(t_h0: &[f64], t_h1: &[f64]) -> Result<()> {
    if t_h0.is_empty() {
        return Err(Error::MissingClass(crate::imaging::Label::H0));
    }
    if t_h1.is_empty() {
        return Err(Error::MissingClass(crate::imaging::Label::H1));
    }
    if t_h0.iter().chain(t_h1).any(|t| t.is_nan()) {
        return Err(Error::InvalidParameter("scores contain NaN".into()));
    }
    Ok(())
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Twice the Mann–Whitney U statistic: `Σ_{H1} (2·#{t0 < t1} + #{t0 = t1})`.
fn doubled_u(sorted_h0: &[f64], t_h1: &[f64]) -> u64 {
    t_h1.iter()
        .map(|&x| {
            let below = sorted_h0.partition_point(|&y| y < x);
            let not_above = sorted_h0.partition_point(|&y| y <= x);
            (below + not_above) as u64
        })
        .sum()
}

fn auc_value(t_h0: &[f64], t_h1: &[f64]) -> f64 {
    let u2 = doubled_u(&sorted(t_h0), t_h1);
    u2 as f64 / (2.0 * t_h0.len() as f64 * t_h1.len() as f64)
}

/// Empirical ROC: one operating point per distinct threshold, ties step
/// diagonally so the trapezoidal area equals the Mann–Whitney AUC.
pub fn roc_points(t_h0: &[f64], t_h1: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = t_h0
        .iter()
        .map(|&t| (t, false))
        .chain(t_h1.iter().map(|&t| (t, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n0, n1) = (t_h0.len() as f64, t_h1.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n0, tp as f64 / n1));
    }
    points
}

/// Trapezoidal area under a polyline of ROC points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

/// Point estimate of the AUC with ties counted ½.
pub fn auc(scores: &ObserverScores) -> Result<RocSummary> {
    check_scores(&scores.t_h0, &scores.t_h1)?;
    Ok(RocSummary {
        auc: auc_value(&scores.t_h0, &scores.t_h1),
        auc_stderr: None,
        ci: None,
        n_boot: 0,
        roc_points: roc_points(&scores.t_h0, &scores.t_h1),
    })
}

fn resample<R: Rng>(x: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..x.len()).map(|_| x[rng.random_range(0..x.len())]));
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_replicates(mut reps: Vec<f64>) -> (f64, (f64, f64)) {
    let se = std_dev(&reps);
    reps.sort_by(f64::total_cmp);
    (se, (quantile(&reps, 0.025), quantile(&reps, 0.975)))
}

fn check_n_boot(n_boot: usize) -> Result<()> {
    if n_boot < MIN_N_BOOT {
        return Err(Error::InvalidParameter(format!(
            "n_boot must be at least {MIN_N_BOOT}, got {n_boot}"
        )));
    }
    Ok(())
}

/// AUC with a class-stratified bootstrap: each replicate resamples the H0
/// and H1 lists independently with replacement, on its own random stream.
pub fn bootstrap_auc(scores: &ObserverScores, n_boot: usize, seed: u64) -> Result<RocSummary> {
    check_n_boot(n_boot)?;
    let mut summary = auc(scores)?;
    let (mut b0, mut b1) = (Vec::new(), Vec::new());
    let reps: Vec<f64> = (0..n_boot as u64)
        .map(|b| {
            let mut rng = stream(seed, Domain::Bootstrap, b);
            resample(&scores.t_h0, &mut rng, &mut b0);
            resample(&scores.t_h1, &mut rng, &mut b1);
            auc_value(&b0, &b1)
        })
        .collect();
    let (se, ci) = summarize_replicates(reps);
    summary.auc_stderr = Some(se);
    summary.ci = Some(ci);
    summary.n_boot = n_boot;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucDifference {
    /// `AUC(a) - AUC(b)`.
    pub difference: f64,
    pub stderr: f64,
    pub ci: (f64, f64),
}

/// Paired bootstrap of `AUC(a) - AUC(b)` for two observers scored on the
/// same test images (same order within each class).
pub fn paired_auc_difference(
    a: &ObserverScores,
    b: &ObserverScores,
    n_boot: usize,
    seed: u64,
) -> Result<AucDifference> {
    check_n_boot(n_boot)?;
    check_scores(&a.t_h0, &a.t_h1)?;
    check_scores(&b.t_h0, &b.t_h1)?;
    if a.t_h0.len() != b.t_h0.len() || a.t_h1.len() != b.t_h1.len() {
        return Err(Error::DimensionMismatch {
            what: "paired score lists",
            expected: a.t_h0.len() + a.t_h1.len(),
            found: b.t_h0.len() + b.t_h1.len(),
        });
    }
    let difference = auc_value(&a.t_h0, &a.t_h1) - auc_value(&b.t_h0, &b.t_h1);
    let (n0, n1) = (a.t_h0.len(), a.t_h1.len());
    let reps: Vec<f64> = (0..n_boot as u64)
        .map(|r| {
            let mut rng = stream(seed, Domain::Bootstrap, r);
            let i0: Vec<usize> = (0..n0).map(|_| rng.random_range(0..n0)).collect();
            let i1: Vec<usize> = (0..n1).map(|_| rng.random_range(0..n1)).collect();
            let pick = |x: &[f64], idx: &[usize]| idx.iter().map(|&i| x[i]).collect::<Vec<f64>>();
            auc_value(&pick(&a.t_h0, &i0), &pick(&a.t_h1, &i1))
                - auc_value(&pick(&b.t_h0, &i0), &pick(&b.t_h1, &i1))
        })
        .collect();
    let (stderr, ci) = summarize_replicates(reps);
    Ok(AucDifference {
        difference,
        stderr,
        ci,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// `SNR_t = (⟨t⟩₁ - ⟨t⟩₀) / sqrt(½σ₀² + ½σ₁²)` with unbiased variances.
pub fn snr_t(scores: &ObserverScores) -> Result<SnrSummary> {
    for (what, x) in [("H0 scores", &scores.t_h0), ("H1 scores", &scores.t_h1)] {
        if x.len() < 2 {
            return Err(Error::InsufficientSamples {
                what,
                needed: 2,
                found: x.len(),
            });
        }
    }
    let (m0, v0) = mean_var(&scores.t_h0);
    let (m1, v1) = mean_var(&scores.t_h1);
    let pooled = 0.5 * (v0 + v1);
    if !(pooled > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let snr = (m1 - m0) / pooled.sqrt();
    if !snr.is_finite() {
        return Err(Error::InvalidParameter("non-finite SNR".into()));
    }
    Ok(SnrSummary { snr_t: snr })
}

/// AUC of an observer with normal, equal-variance scores: `Φ(SNR / √2)`.
pub fn normal_auc(snr: f64) -> f64 {
    Normal::standard().cdf(snr / std::f64::consts::SQRT_2)
}

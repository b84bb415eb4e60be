use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ObserverScores;
use crate::channels::{channelize, ChannelBank};
use crate::imaging::{Label, LabeledDataset};
use crate::linalg::{spd_solve, spd_solve_with_ridge, symmetrize};
use crate::statistics::{sample_covariance, CovarianceModel, MeanDifference};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSpace {
    Image,
    Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTemplate {
    pub weights: DVector<f64>,
    pub space: TemplateSpace,
    /// Ridge added to the covariance diagonal when the plain solve failed.
    pub ridge: Option<f64>,
}

impl LinearTemplate {
    pub fn image(weights: DVector<f64>) -> Self {
        Self {
            weights,
            space: TemplateSpace::Image,
            ridge: None,
        }
    }

    pub fn channel(weights: DVector<f64>) -> Self {
        Self {
            weights,
            space: TemplateSpace::Channel,
            ridge: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `wᵀ x` for every column of `data`.
    pub fn scores(&self, data: &DMatrix<f64>) -> Result<Vec<f64>> {
        if data.nrows() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                what: "template vs data",
                expected: self.weights.len(),
                found: data.nrows(),
            });
        }
        Ok(data.tr_mul(&self.weights).iter().copied().collect())
    }
}

/// Hotelling template `w = K⁻¹ Δg` by dense Cholesky solve.
///
/// A numerically singular `K` is retried once with a ridge of
/// `1e-8 · trace(K) / M`; if that also fails the error names the
/// condition estimate.
pub fn hotelling_template(k: &CovarianceModel, delta: &MeanDifference) -> Result<LinearTemplate> {
    if k.dim() != delta.len() {
        return Err(Error::DimensionMismatch {
            what: "covariance vs mean difference",
            expected: delta.len(),
            found: k.dim(),
        });
    }
    let (weights, ridge) = spd_solve_with_ridge(&k.matrix, &delta.vector, "Hotelling covariance")?;
    Ok(LinearTemplate {
        weights,
        space: TemplateSpace::Image,
        ridge,
    })
}

fn check_bank(bank: &ChannelBank, m: usize) -> Result<()> {
    if bank.num_pixels() != m {
        return Err(Error::DimensionMismatch {
            what: "channel bank vs images",
            expected: m,
            found: bank.num_pixels(),
        });
    }
    Ok(())
}

/// Channelized Hotelling template estimated from labeled training data:
/// `w_v = K_v⁻¹ Δv̄` with `K_v = ½(K_v0 + K_v1)`, each class centered on its
/// own mean.
pub fn cho_template(bank: &ChannelBank, training: &LabeledDataset) -> Result<LinearTemplate> {
    check_bank(bank, training.num_pixels())?;
    let d = bank.num_channels();
    let mut parts = Vec::with_capacity(2);
    let mut means = Vec::with_capacity(2);
    for label in [Label::H0, Label::H1] {
        let x = training.class_pixels(label);
        if x.ncols() == 0 {
            return Err(Error::MissingClass(label));
        }
        if x.ncols() < d + 1 {
            return Err(Error::InsufficientSamples {
                what: "channelized covariance (per class, D + 1)",
                needed: d + 1,
                found: x.ncols(),
            });
        }
        let v = channelize(bank, &x)?;
        means.push(v.column_mean());
        parts.push(sample_covariance(&v)?.matrix);
    }
    let mut kv = (&parts[0] + &parts[1]) * 0.5;
    symmetrize(&mut kv);
    let dv = &means[1] - &means[0];
    let weights = spd_solve(&kv, &dv, "channelized covariance")?;
    Ok(LinearTemplate::channel(weights))
}

/// Channelized Hotelling template from known statistics:
/// `K_v = T K Tᵀ`, `Δv = T Δg`.
pub fn cho_template_exact(
    bank: &ChannelBank,
    k: &CovarianceModel,
    delta: &MeanDifference,
) -> Result<LinearTemplate> {
    check_bank(bank, delta.len())?;
    check_bank(bank, k.dim())?;
    let t = &bank.matrix;
    let mut kv = t * &k.matrix * t.transpose();
    symmetrize(&mut kv);
    let dv = t * &delta.vector;
    let weights = spd_solve(&kv, &dv, "channelized covariance")?;
    Ok(LinearTemplate::channel(weights))
}

/// Image-space equivalent `Tᵀ w_v` of a channel-space template.
pub fn back_project(bank: &ChannelBank, template: &LinearTemplate) -> Result<DVector<f64>> {
    if template.space != TemplateSpace::Channel || template.len() != bank.num_channels() {
        return Err(Error::DimensionMismatch {
            what: "channel template",
            expected: bank.num_channels(),
            found: template.len(),
        });
    }
    Ok(bank.matrix.tr_mul(&template.weights))
}

/// `SNR_t = wᵀΔ / sqrt(wᵀ K w)` for known statistics in the template's space.
pub fn exact_snr(weights: &DVector<f64>, k: &DMatrix<f64>, delta: &DVector<f64>) -> f64 {
    weights.dot(delta) / weights.dot(&(k * weights)).sqrt()
}

/// Scores every image of `dataset`; channel templates need the bank.
pub fn apply_linear(
    template: &LinearTemplate,
    dataset: &LabeledDataset,
    bank: Option<&ChannelBank>,
    observer_id: &str,
) -> Result<ObserverScores> {
    let scores = match (template.space, bank) {
        (TemplateSpace::Image, _) => template.scores(&dataset.pixels)?,
        (TemplateSpace::Channel, Some(bank)) => template.scores(&channelize(bank, &dataset.pixels)?)?,
        (TemplateSpace::Channel, None) => {
            return Err(Error::InvalidParameter(
                "a channel-space template needs its channel bank".into(),
            ))
        }
    };
    ObserverScores::from_labeled(observer_id, &scores, &dataset.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelMethod;
    use crate::rng::{stream, Domain};
    use crate::statistics::MeanDifferenceProvenance;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn md(v: DVector<f64>) -> MeanDifference {
        MeanDifference {
            vector: v,
            provenance: MeanDifferenceProvenance::KnownSignal,
        }
    }

    fn random_spd(m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, Domain::Synthetic, 0);
        let a = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * 0.1
    }

    #[test]
    fn scaled_identity_gives_scaled_delta() {
        let k = CovarianceModel::exact(DMatrix::identity(4, 4) * 2.5).unwrap();
        let d = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let w = hotelling_template(&k, &md(d.clone())).unwrap();
        assert!((w.weights - d / 2.5).amax() < 1e-14);
        assert_eq!(w.ridge, None);
    }

    #[test]
    fn random_spd_solve_has_small_residual() {
        let kmat = random_spd(64, 1);
        let mut rng = stream(2, Domain::Synthetic, 0);
        let d = DVector::from_fn(64, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = hotelling_template(&CovarianceModel::exact(kmat.clone()).unwrap(), &md(d.clone())).unwrap();
        assert!((&kmat * &w.weights - &d).norm() / d.norm() < 1e-10);
    }

    #[test]
    fn singular_covariance_is_ridged() {
        let v = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let k = CovarianceModel::exact(&v * v.transpose()).unwrap();
        let w = hotelling_template(&k, &md(v)).unwrap();
        assert!(w.ridge.is_some());
    }

    #[test]
    fn one_channel_matched_filter_has_positive_weight() {
        let g = 4;
        let m = g * g;
        let s = DVector::from_fn(m, |i, _| 1.0 + (i % 3) as f64);
        let mut rng = stream(3, Domain::Synthetic, 0);
        let n = 30;
        let mut pixels = DMatrix::from_fn(m, 2 * n, |_, _| rng.sample::<f64, _>(StandardNormal));
        for j in n..2 * n {
            let mut c = pixels.column_mut(j);
            c += &s;
        }
        let ds = LabeledDataset::new(g, pixels, [vec![Label::H0; n], vec![Label::H1; n]].concat(), 0).unwrap();
        let bank = ChannelBank::from_rows(DMatrix::from_row_slice(1, m, (&s / s.norm()).as_slice()), ChannelMethod::Cg);
        let t = cho_template(&bank, &ds).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.weights[0] > 0.0);
    }

    #[test]
    fn too_many_channels_for_training_data_fails() {
        let g = 3;
        let m = g * g;
        let mut rng = stream(4, Domain::Synthetic, 0);
        let pixels = DMatrix::from_fn(m, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = LabeledDataset::new(g, pixels, [vec![Label::H0; 4], vec![Label::H1; 4]].concat(), 0).unwrap();
        let bank = ChannelBank::from_rows(DMatrix::identity(m, m), ChannelMethod::Cg);
        assert!(matches!(cho_template(&bank, &ds), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn full_orthonormal_bank_reproduces_hotelling_snr() {
        let m = 12;
        let kmat = random_spd(m, 5);
        let d = DVector::from_fn(m, |i, _| (i as f64).sin());
        // random orthogonal bank
        let mut rng = stream(6, Domain::Synthetic, 0);
        let a = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = a.qr().q();
        let bank = ChannelBank::from_rows(q.transpose(), ChannelMethod::Cg);
        let k = CovarianceModel::exact(kmat.clone()).unwrap();
        let ho = hotelling_template(&k, &md(d.clone())).unwrap();
        let cho = cho_template_exact(&bank, &k, &md(d.clone())).unwrap();
        let snr_ho = exact_snr(&ho.weights, &kmat, &d);
        let snr_cho = exact_snr(&back_project(&bank, &cho).unwrap(), &kmat, &d);
        assert!((snr_ho - snr_cho).abs() / snr_ho < 1e-10);
    }

    #[test]
    fn zero_template_scores_zero_and_channel_needs_bank() {
        let ds = LabeledDataset::new(2, DMatrix::from_element(4, 4, 1.0), vec![Label::H0, Label::H0, Label::H1, Label::H1], 0).unwrap();
        let s = apply_linear(&LinearTemplate::image(DVector::zeros(4)), &ds, None, "zero").unwrap();
        assert!(s.t_h0.iter().chain(&s.t_h1).all(|&t| t == 0.0));
        assert!(apply_linear(&LinearTemplate::channel(DVector::zeros(2)), &ds, None, "x").is_err());
        assert!(apply_linear(&LinearTemplate::image(DVector::zeros(3)), &ds, None, "x").is_err());
    }
}

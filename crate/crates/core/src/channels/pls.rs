//! Partial-least-squares channels for a two-class task.
//!
//! NIPALS PLS1 on column-centered images with a centered ±1 response. Each
//! component takes the image/label cross-covariance direction `w = X y`,
//! computes scores `t = Xᵀ w`, and deflates both the images and the
//! response against `t`. The channels are the columns of the rotation
//! `R = W (PᵀW)⁻¹`, so `Rᵀ g` reproduces the latent scores of a raw image;
//! rows are normalized but not orthogonal.

use nalgebra::{DMatrix, DVector};

use super::{BuildLog, ChannelBank, ChannelMethod};
use crate::imaging::{Label, LabeledDataset};
use crate::{Error, Result};

const ZERO_DIRECTION_RTOL: f64 = 1e-10;

pub fn build_pls_channels(dataset: &LabeledDataset, num_channels: usize) -> Result<ChannelBank> {
    if num_channels == 0 {
        return Err(Error::InvalidParameter("channel count must be at least 1".into()));
    }
    for label in [Label::H0, Label::H1] {
        if dataset.count(label) == 0 {
            return Err(Error::MissingClass(label));
        }
    }
    let m = dataset.num_pixels();
    let n = dataset.len();

    let mut x = dataset.pixels.clone();
    let mean = x.column_mean();
    for mut col in x.column_iter_mut() {
        col -= &mean;
    }
    let mut y = DVector::from_iterator(
        n,
        dataset.labels.iter().map(|l| if *l == Label::H1 { 1.0 } else { -1.0 }),
    );
    let ybar = y.mean();
    y.add_scalar_mut(-ybar);

    let mut weights: Vec<DVector<f64>> = Vec::new();
    let mut loadings: Vec<DVector<f64>> = Vec::new();
    let mut first_norm = 0.0;
    for component in 0..num_channels {
        let mut w = &x * &y;
        let norm = w.norm();
        if component == 0 {
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::DegenerateDirection { component });
            }
            first_norm = norm;
        } else if norm < ZERO_DIRECTION_RTOL * first_norm {
            break;
        }
        w /= norm;
        let t = x.tr_mul(&w);
        let tt = t.norm_squared();
        if !(tt > 0.0) {
            if component == 0 {
                return Err(Error::DegenerateDirection { component });
            }
            break;
        }
        let p = &x * &t / tt;
        let q = y.dot(&t) / tt;
        x.ger(-1.0, &p, &t, 1.0);
        y.axpy(-q, &t, 1.0);
        weights.push(w);
        loadings.push(p);
    }

    let k = weights.len();
    let w = DMatrix::from_columns(&weights);
    let p = DMatrix::from_columns(&loadings);
    let ptw = p.tr_mul(&w);
    let inv = ptw.try_inverse().ok_or(Error::DegenerateDirection { component: k })?;
    let rotation = w * inv;
    let mut matrix = DMatrix::zeros(k, m);
    for (i, col) in rotation.column_iter().enumerate() {
        matrix.set_row(i, &(col / col.norm()).transpose());
    }
    let truncated = k < num_channels;
    if truncated {
        log::info!("PLS stopped after {k} components (requested {num_channels}): data rank exhausted");
    }
    Ok(ChannelBank {
        matrix,
        method: ChannelMethod::Pls,
        tau_orth: None,
        log: BuildLog {
            requested: num_channels,
            truncated,
            note: format!("NIPALS PLS1 rotation channels, {k} components"),
            ..BuildLog::default()
        },
    })
}

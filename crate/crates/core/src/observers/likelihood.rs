use nalgebra::DVector;

use crate::imaging::{NoiseKind, NoiseModel};
use crate::{Error, Result};

/// `log Λ_BKE(g | b) = sᵀ(g - b)/σ² - sᵀs/(2σ²)` under i.i.d. Gaussian noise.
pub fn bke_log_likelihood_ratio(
    g: &DVector<f64>,
    b: &DVector<f64>,
    s: &DVector<f64>,
    noise: &NoiseModel,
) -> Result<f64> {
    match noise.kind {
        NoiseKind::IidGaussian => {}
    }
    noise.validate()?;
    for (what, v) in [("background", b), ("signal", s)] {
        if v.len() != g.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: g.len(),
                found: v.len(),
            });
        }
    }
    let var = noise.variance();
    Ok(s.dot(&(g - b)) / var - s.norm_squared() / (2.0 * var))
}

//! Stochastic object models: the Type-I lumpy background and the
//! Gaussian-mixture signal, plus sampling of background object states.
//!
//! Coordinates are in arbitrary units (a.u.). Pixel `(i, j)` (row `i`,
//! column `j`) of a `G x G` grid over an `X x Y` field of view is centered at
//! `((j + 0.5) X / G, (i + 0.5) Y / G)`; with `X = G` this is the unit-pitch
//! convention `(j + 0.5, i + 0.5)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A 2-D point in field-of-view coordinates.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FovRepr", into = "FovRepr")]
pub struct FieldOfView {
    pub extent_x: f64,
    pub extent_y: f64,
    pub grid_size: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Extent {
    Square(f64),
    Rect([f64; 2]),
}

#[derive(Serialize, Deserialize)]
struct FovRepr {
    extent: Extent,
    grid: usize,
}

impl TryFrom<FovRepr> for FieldOfView {
    type Error = Error;

    fn try_from(r: FovRepr) -> Result<Self> {
        let (x, y) = match r.extent {
            Extent::Square(e) => (e, e),
            Extent::Rect([x, y]) => (x, y),
        };
        FieldOfView::new(x, y, r.grid)
    }
}

impl From<FieldOfView> for FovRepr {
    fn from(f: FieldOfView) -> Self {
        let extent = if f.extent_x == f.extent_y {
            Extent::Square(f.extent_x)
        } else {
            Extent::Rect([f.extent_x, f.extent_y])
        };
        FovRepr {
            extent,
            grid: f.grid_size,
        }
    }
}

impl FieldOfView {
    pub fn new(extent_x: f64, extent_y: f64, grid_size: usize) -> Result<Self> {
        if !(extent_x > 0.0 && extent_y > 0.0) || !extent_x.is_finite() || !extent_y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "field of view extent must be positive, got {extent_x} x {extent_y}"
            )));
        }
        if grid_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid size must be at least 2, got {grid_size}"
            )));
        }
        Ok(Self {
            extent_x,
            extent_y,
            grid_size,
        })
    }

    /// Square field of view with the given extent and grid.
    pub fn square(extent: f64, grid_size: usize) -> Result<Self> {
        Self::new(extent, extent, grid_size)
    }

    /// Number of pixels `M = G^2`.
    pub fn num_pixels(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn area(&self) -> f64 {
        self.extent_x * self.extent_y
    }

    pub fn pitch(&self) -> (f64, f64) {
        let g = self.grid_size as f64;
        (self.extent_x / g, self.extent_y / g)
    }

    /// Center x-coordinates of the pixel columns.
    pub fn column_centers(&self) -> Vec<f64> {
        let (px, _) = self.pitch();
        (0..self.grid_size).map(|j| (j as f64 + 0.5) * px).collect()
    }

    /// Center y-coordinates of the pixel rows.
    pub fn row_centers(&self) -> Vec<f64> {
        let (_, py) = self.pitch();
        (0..self.grid_size).map(|i| (i as f64 + 0.5) * py).collect()
    }

    /// Center of the pixel with row-major index `m = i * G + j`.
    pub fn pixel_center(&self, m: usize) -> Point {
        let (px, py) = self.pitch();
        let (i, j) = (m / self.grid_size, m % self.grid_size);
        [(j as f64 + 0.5) * px, (i as f64 + 0.5) * py]
    }

    /// Closed-rectangle membership test.
    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.extent_x).contains(&p[0]) && (0.0..=self.extent_y).contains(&p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpyModelParams {
    /// Mean lump count `N̄`.
    pub mean_count: f64,
    /// Lump amplitude `A`.
    pub amplitude: f64,
    /// Lump width `s` (a.u.).
    pub width: f64,
}

impl LumpyModelParams {
    pub fn new(mean_count: f64, amplitude: f64, width: f64) -> Result<Self> {
        let p = Self {
            mean_count,
            amplitude,
            width,
        };
        p.validate()?;
        Ok(p)
    }

    /// `N̄ = 5`, `A = 1.2`, `s = 7.8`.
    pub fn reference() -> Self {
        Self {
            mean_count: 5.0,
            amplitude: 1.2,
            width: 7.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_count > 0.0 && self.mean_count.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mean lump count must be positive, got {}",
                self.mean_count
            )));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lump width must be positive, got {}",
                self.width
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidParameter("lump amplitude must be finite".into()));
        }
        Ok(())
    }

    /// Evaluates one lump `A exp(-|r - c|^2 / (2 s^2))`.
    pub fn lump(&self, r: Point, center: Point) -> f64 {
        let dx = r[0] - center[0];
        let dy = r[1] - center[1];
        self.amplitude * (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }
}

/// Background object state `θ = (N_b, {r_n})`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LumpyState {
    pub centers: Vec<Point>,
}

impl LumpyState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(centers: Vec<Point>) -> Self {
        Self { centers }
    }

    pub fn lump_count(&self) -> usize {
        self.centers.len()
    }

    /// Checks that every center lies in the closed FOV rectangle.
    pub fn validate(&self, fov: &FieldOfView) -> Result<()> {
        match self.centers.iter().find(|c| !fov.contains(**c)) {
            Some(c) => Err(Error::InvalidParameter(format!(
                "lump center ({}, {}) outside the field of view",
                c[0], c[1]
            ))),
            None => Ok(()),
        }
    }

    /// Union of two lump lists.
    pub fn merged(&self, other: &LumpyState) -> LumpyState {
        let mut centers = self.centers.clone();
        centers.extend_from_slice(&other.centers);
        LumpyState { centers }
    }
}

/// Draws `N_b ~ Poisson(N̄)` and `N_b` centers uniform over the FOV.
pub fn sample_lumpy_state<R: Rng + ?Sized>(
    params: &LumpyModelParams,
    fov: &FieldOfView,
    rng: &mut R,
) -> LumpyState {
    let poisson = Poisson::new(params.mean_count).expect("validated mean count");
    let n = poisson.sample(rng) as usize;
    let centers = (0..n)
        .map(|_| {
            [
                rng.random::<f64>() * fov.extent_x,
                rng.random::<f64>() * fov.extent_y,
            ]
        })
        .collect();
    LumpyState { centers }
}

/// Continuous background `f_b(r) = Σ_n l(r - r_n)`.
pub fn continuous_background_value(state: &LumpyState, params: &LumpyModelParams, r: Point) -> f64 {
    state.centers.iter().map(|&c| params.lump(r, c)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub amplitude: f64,
    pub center: Point,
    /// Per-axis standard deviations `(σ_x, σ_y)`.
    pub width: [f64; 2],
}

impl GaussianComponent {
    pub fn value(&self, r: Point) -> f64 {
        let dx = r[0] - self.center[0];
        let dy = r[1] - self.center[1];
        let (sx, sy) = (self.width[0], self.width[1]);
        self.amplitude * (-(dx * dx) / (2.0 * sx * sx) - (dy * dy) / (2.0 * sy * sy)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalRepr", into = "SignalRepr")]
pub struct GaussianMixtureSignal {
    components: Vec<GaussianComponent>,
}

#[derive(Serialize, Deserialize)]
struct SignalRepr {
    components: Vec<GaussianComponent>,
}

impl TryFrom<SignalRepr> for GaussianMixtureSignal {
    type Error = Error;
    fn try_from(r: SignalRepr) -> Result<Self> {
        GaussianMixtureSignal::new(r.components)
    }
}

impl From<GaussianMixtureSignal> for SignalRepr {
    fn from(s: GaussianMixtureSignal) -> Self {
        SignalRepr {
            components: s.components,
        }
    }
}

impl GaussianMixtureSignal {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "signal needs at least one component".into(),
            ));
        }
        for (k, c) in components.iter().enumerate() {
            if !(c.width[0] > 0.0 && c.width[1] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "signal component {k} has non-positive width {:?}",
                    c.width
                )));
            }
        }
        Ok(Self { components })
    }

    /// Three-component irregular signal centered near (32, 32).
    pub fn reference() -> Self {
        let amplitude = [0.4, 0.28, 0.32];
        let mu_x = [32.0, 37.0, 30.0];
        let mu_y = [32.0, 31.0, 36.0];
        let sigma_x = [3.0, 1.5, 1.0];
        let sigma_y = [2.0, 1.0, 1.5];
        let components = (0..3)
            .map(|k| GaussianComponent {
                amplitude: amplitude[k],
                center: [mu_x[k], mu_y[k]],
                width: [sigma_x[k], sigma_y[k]],
            })
            .collect();
        Self { components }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }
}

/// Continuous signal `f_s(r)`: sum of anisotropic Gaussians.
pub fn continuous_signal_value(signal: &GaussianMixtureSignal, r: Point) -> f64 {
    signal.components.iter().map(|c| c.value(r)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn fov64() -> FieldOfView {
        FieldOfView::square(64.0, 64).unwrap()
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(FieldOfView::new(0.0, 1.0, 4).is_err());
        assert!(FieldOfView::square(1.0, 1).is_err());
        assert!(LumpyModelParams::new(0.0, 1.0, 1.0).is_err());
        assert!(LumpyModelParams::new(1.0, 1.0, -1.0).is_err());
        let bad = GaussianComponent {
            amplitude: 1.0,
            center: [0.0, 0.0],
            width: [0.0, 1.0],
        };
        assert!(GaussianMixtureSignal::new(vec![bad]).is_err());
        assert!(GaussianMixtureSignal::new(vec![]).is_err());
    }

    #[test]
    fn pixel_centers_follow_half_pitch_convention() {
        let fov = FieldOfView::square(8.0, 8).unwrap();
        assert_eq!(fov.pixel_center(0), [0.5, 0.5]);
        assert_eq!(fov.pixel_center(8 * 2 + 5), [5.5, 2.5]);
        let coarse = FieldOfView::square(64.0, 32).unwrap();
        assert_eq!(coarse.pixel_center(1), [3.0, 1.0]);
    }

    #[test]
    fn lump_value_at_center_is_amplitude() {
        let p = LumpyModelParams::reference();
        let state = LumpyState::new(vec![[10.0, 20.0]]);
        assert_eq!(continuous_background_value(&state, &p, [10.0, 20.0]), 1.2);
    }

    #[test]
    fn lump_value_one_width_away() {
        let p = LumpyModelParams::reference();
        let state = LumpyState::new(vec![[10.0, 20.0]]);
        let r = [10.0 + 7.8 * 0.6, 20.0 + 7.8 * 0.8];
        let expected = 1.2 * (-0.5f64).exp();
        assert!((continuous_background_value(&state, &p, r) - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_background_is_zero() {
        let p = LumpyModelParams::reference();
        let v = continuous_background_value(&LumpyState::empty(), &p, [3.0, 4.0]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn reference_signal_value_at_32_32() {
        let s = GaussianMixtureSignal::reference();
        // term-by-term: component 1 at its center, then the two tails
        let t2 = 0.28 * (-(25.0) / (2.0 * 2.25) - 1.0 / (2.0 * 1.0f64)).exp();
        let t3 = 0.32 * (-(4.0) / 2.0 - 16.0 / (2.0 * 2.25f64)).exp();
        let expected = 0.4 + t2 + t3;
        let v = continuous_signal_value(&s, [32.0, 32.0]);
        assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        assert!(v > 0.4 && v < 0.41);
    }

    #[test]
    fn single_component_peak_is_amplitude() {
        let c = GaussianComponent {
            amplitude: 0.7,
            center: [5.0, 6.0],
            width: [1.0, 2.0],
        };
        let s = GaussianMixtureSignal::new(vec![c]).unwrap();
        assert_eq!(continuous_signal_value(&s, [5.0, 6.0]), 0.7);
    }

    #[test]
    fn reference_signal_round_trips_through_json() {
        let s = GaussianMixtureSignal::reference();
        let text = serde_json::to_string(&s).unwrap();
        let back: GaussianMixtureSignal = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        let amps: Vec<f64> = back.components().iter().map(|c| c.amplitude).collect();
        assert_eq!(amps, vec![0.4, 0.28, 0.32]);
        let mux: Vec<f64> = back.components().iter().map(|c| c.center[0]).collect();
        assert_eq!(mux, vec![32.0, 37.0, 30.0]);
        let muy: Vec<f64> = back.components().iter().map(|c| c.center[1]).collect();
        assert_eq!(muy, vec![32.0, 31.0, 36.0]);
        let sx: Vec<f64> = back.components().iter().map(|c| c.width[0]).collect();
        assert_eq!(sx, vec![3.0, 1.5, 1.0]);
        let sy: Vec<f64> = back.components().iter().map(|c| c.width[1]).collect();
        assert_eq!(sy, vec![2.0, 1.0, 1.5]);
    }

    #[test]
    fn fov_accepts_scalar_or_pair_extent() {
        let a: FieldOfView = serde_json::from_str(r#"{"extent": 64, "grid": 32}"#).unwrap();
        assert_eq!(a, FieldOfView::square(64.0, 32).unwrap());
        let b: FieldOfView = serde_json::from_str(r#"{"extent": [64, 32], "grid": 16}"#).unwrap();
        assert_eq!((b.extent_x, b.extent_y), (64.0, 32.0));
        assert!(serde_json::from_str::<FieldOfView>(r#"{"extent": -1, "grid": 32}"#).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = LumpyModelParams::reference();
        let a = sample_lumpy_state(&p, &fov64(), &mut stream(42, Domain::Background, 0));
        let b = sample_lumpy_state(&p, &fov64(), &mut stream(42, Domain::Background, 0));
        assert_eq!(a, b);
        a.validate(&fov64()).unwrap();
    }
}

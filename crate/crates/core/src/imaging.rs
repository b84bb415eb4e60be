//! Analytic Gaussian continuous-to-discrete imaging, noise and dataset
//! generation for the SKE/BKS detection task.
//!
//! The collimator sensitivity of measurement `m` is
//! `h_m(r) = h / (2π w²) exp(-|r - r_m|² / (2 w²))`. Convolving it with a
//! Gaussian object component of per-axis width `σ` gives another Gaussian of
//! variance `σ² + w²`, so every projection below is evaluated in closed form
//! over all of ℝ² and is separable in x and y.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Domain};
use crate::task::{sample_lumpy_state, FieldOfView, GaussianMixtureSignal, LumpyModelParams, LumpyState, Point};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    H0,
    H1,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    NoiselessBackground,
    NoiselessSignal,
    Measured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector {
    pub values: DVector<f64>,
    pub label: Label,
    pub provenance: Provenance,
}

impl ImageVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    /// Sensitivity width `w` (a.u.).
    pub width: f64,
    /// Sensitivity height `h`.
    pub height: f64,
}

impl OperatorParams {
    /// `w = 2.5`, `h = 36`.
    pub fn reference() -> Self {
        Self {
            width: 2.5,
            height: 36.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOperator {
    fov: FieldOfView,
    width: f64,
    height: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl GaussianOperator {
    pub fn new(fov: FieldOfView, params: OperatorParams) -> Result<Self> {
        if !(params.width > 0.0 && params.height > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sensitivity width and height must be positive, got w = {}, h = {}",
                params.width, params.height
            )));
        }
        Ok(Self {
            xs: fov.column_centers(),
            ys: fov.row_centers(),
            fov,
            width: params.width,
            height: params.height,
        })
    }

    pub fn fov(&self) -> &FieldOfView {
        &self.fov
    }

    pub fn num_measurements(&self) -> usize {
        self.fov.num_pixels()
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Sensitivity `h_m(r)` of measurement `m` to a point at `r`.
    pub fn sensitivity(&self, m: usize, r: Point) -> f64 {
        let c = self.fov.pixel_center(m);
        let w2 = self.width * self.width;
        let d2 = (r[0] - c[0]).powi(2) + (r[1] - c[1]).powi(2);
        self.height / (2.0 * std::f64::consts::PI * w2) * (-d2 / (2.0 * w2)).exp()
    }

    /// Adds `scale · H{a exp(-(x-μx)²/(2σx²) - (y-μy)²/(2σy²))}` into `out`.
    fn accumulate_gaussian(&self, amplitude: f64, center: Point, sigma: [f64; 2], out: &mut [f64]) {
        let w2 = self.width * self.width;
        let (vx, vy) = (sigma[0] * sigma[0] + w2, sigma[1] * sigma[1] + w2);
        let gain = amplitude * self.height * sigma[0] * sigma[1] / (vx * vy).sqrt();
        let ex: Vec<f64> = self
            .xs
            .iter()
            .map(|x| (-(x - center[0]).powi(2) / (2.0 * vx)).exp())
            .collect();
        let g = self.fov.grid_size;
        for (i, y) in self.ys.iter().enumerate() {
            let ey = gain * (-(y - center[1]).powi(2) / (2.0 * vy)).exp();
            for (o, e) in out[i * g..(i + 1) * g].iter_mut().zip(&ex) {
                *o += ey * e;
            }
        }
    }

    /// Projection of a single lump centered at `center` added into `out`.
    pub fn accumulate_lump(&self, params: &LumpyModelParams, center: Point, out: &mut [f64]) {
        let s = params.width;
        self.accumulate_gaussian(params.amplitude, center, [s, s], out);
    }
}

/// Noiseless background image `b = H f_b`.
pub fn project_background(
    state: &LumpyState,
    params: &LumpyModelParams,
    op: &GaussianOperator,
) -> ImageVector {
    let mut values = vec![0.0; op.num_measurements()];
    for &c in &state.centers {
        op.accumulate_lump(params, c, &mut values);
    }
    ImageVector {
        values: DVector::from_vec(values),
        label: Label::Unlabeled,
        provenance: Provenance::NoiselessBackground,
    }
}

/// Noiseless signal image `s = H f_s`.
pub fn project_signal(signal: &GaussianMixtureSignal, op: &GaussianOperator) -> ImageVector {
    let mut values = vec![0.0; op.num_measurements()];
    for c in signal.components() {
        op.accumulate_gaussian(c.amplitude, c.center, c.width, &mut values);
    }
    ImageVector {
        values: DVector::from_vec(values),
        label: Label::Unlabeled,
        provenance: Provenance::NoiselessSignal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    IidGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub std_dev: f64,
}

impl NoiseModel {
    pub fn iid_gaussian(std_dev: f64) -> Result<Self> {
        let n = Self {
            kind: NoiseKind::IidGaussian,
            std_dev,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std_dev > 0.0 && self.std_dev.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise standard deviation must be positive, got {}",
                self.std_dev
            )));
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.std_dev * self.std_dev
    }
}

/// Adds i.i.d. zero-mean Gaussian noise to a noiseless image.
pub fn add_noise<R: Rng + ?Sized>(image: &ImageVector, noise: &NoiseModel, rng: &mut R) -> ImageVector {
    let values = image
        .values
        .map(|v| v + noise.std_dev * rng.sample::<f64, _>(StandardNormal));
    ImageVector {
        values,
        label: image.label,
        provenance: Provenance::Measured,
    }
}

/// Everything needed to simulate the detection task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub fov: FieldOfView,
    pub lumpy: LumpyModelParams,
    pub signal: GaussianMixtureSignal,
    pub operator: OperatorParams,
    pub noise: NoiseModel,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.lumpy.validate()?;
        self.noise.validate()?;
        GaussianOperator::new(self.fov, self.operator)?;
        Ok(())
    }
}

/// Instantiated task: operator plus the projected (known) signal image.
#[derive(Debug, Clone)]
pub struct TaskModel {
    pub config: TaskConfig,
    pub operator: GaussianOperator,
    pub signal: ImageVector,
}

impl TaskModel {
    pub fn new(config: TaskConfig) -> Result<Self> {
        config.validate()?;
        let operator = GaussianOperator::new(config.fov, config.operator)?;
        let signal = project_signal(&config.signal, &operator);
        Ok(Self {
            config,
            operator,
            signal,
        })
    }

    /// Uses a caller-supplied signal image instead of the projected mixture.
    pub fn with_signal_image(config: TaskConfig, signal: ImageVector) -> Result<Self> {
        config.validate()?;
        let operator = GaussianOperator::new(config.fov, config.operator)?;
        if signal.len() != operator.num_measurements() {
            return Err(Error::DimensionMismatch {
                what: "signal image",
                expected: operator.num_measurements(),
                found: signal.len(),
            });
        }
        Ok(Self {
            config,
            operator,
            signal,
        })
    }

    pub fn num_pixels(&self) -> usize {
        self.operator.num_measurements()
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.config.noise
    }

    pub fn lumpy(&self) -> &LumpyModelParams {
        &self.config.lumpy
    }

    pub fn fov(&self) -> &FieldOfView {
        &self.config.fov
    }

    /// Background state of image `index` under `seed`.
    pub fn background_state(&self, seed: u64, index: u64) -> LumpyState {
        let mut rng = stream(seed, Domain::Background, index);
        sample_lumpy_state(&self.config.lumpy, &self.config.fov, &mut rng)
    }

    fn background_into(&self, seed: u64, index: u64, out: &mut [f64]) {
        let state = self.background_state(seed, index);
        for &c in &state.centers {
            self.operator.accumulate_lump(&self.config.lumpy, c, out);
        }
    }

    fn measured_into(&self, seed: u64, index: u64, label: Label, out: &mut [f64]) {
        out.fill(0.0);
        self.background_into(seed, index, out);
        if label == Label::H1 {
            for (o, s) in out.iter_mut().zip(self.signal.values.iter()) {
                *o += s;
            }
        }
        let mut rng = stream(seed, Domain::Noise, index);
        let sd = self.config.noise.std_dev;
        for o in out.iter_mut() {
            *o += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }

    /// `n_per_class` H0 images `b + n` followed by `n_per_class` H1 images
    /// `b + s + n`, every image with its own background and noise stream.
    pub fn generate_dataset(&self, n_per_class: usize, seed: u64) -> Result<LabeledDataset> {
        self.generate_unbalanced(n_per_class, n_per_class, seed)
    }

    pub fn generate_unbalanced(&self, n_h0: usize, n_h1: usize, seed: u64) -> Result<LabeledDataset> {
        if n_h0 == 0 || n_h1 == 0 {
            return Err(Error::InvalidParameter(
                "need at least one image per class".into(),
            ));
        }
        let m = self.num_pixels();
        let n = n_h0 + n_h1;
        let labels: Vec<Label> = std::iter::repeat_n(Label::H0, n_h0)
            .chain(std::iter::repeat_n(Label::H1, n_h1))
            .collect();
        let mut pixels = DMatrix::zeros(m, n);
        for (k, (mut col, label)) in pixels.column_iter_mut().zip(&labels).enumerate() {
            self.measured_into(seed, k as u64, *label, col.as_mut_slice());
        }
        Ok(LabeledDataset {
            grid_size: self.fov().grid_size,
            pixels,
            labels,
            seed,
        })
    }

    /// `n` noiseless background images, one per column.
    pub fn generate_backgrounds(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let mut pixels = DMatrix::zeros(self.num_pixels(), n);
        for (k, mut col) in pixels.column_iter_mut().enumerate() {
            self.background_into(seed, k as u64, col.as_mut_slice());
        }
        pixels
    }
}

/// Measured images stored one per column, with per-image labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub grid_size: usize,
    pub pixels: DMatrix<f64>,
    pub labels: Vec<Label>,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(grid_size: usize, pixels: DMatrix<f64>, labels: Vec<Label>, seed: u64) -> Result<Self> {
        if pixels.nrows() != grid_size * grid_size {
            return Err(Error::DimensionMismatch {
                what: "dataset pixels",
                expected: grid_size * grid_size,
                found: pixels.nrows(),
            });
        }
        if labels.len() != pixels.ncols() {
            return Err(Error::DimensionMismatch {
                what: "dataset labels",
                expected: pixels.ncols(),
                found: labels.len(),
            });
        }
        Ok(Self {
            grid_size,
            pixels,
            labels,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_pixels(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn image(&self, k: usize) -> ImageVector {
        ImageVector {
            values: self.pixels.column(k).into_owned(),
            label: self.labels[k],
            provenance: Provenance::Measured,
        }
    }

    /// Column indices of the images carrying `label`.
    pub fn indices(&self, label: Label) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.labels[k] == label).collect()
    }

    /// Images of one class, one per column.
    pub fn class_pixels(&self, label: Label) -> DMatrix<f64> {
        let idx = self.indices(label);
        self.pixels.select_columns(idx.iter())
    }

    /// Labels as `(label, run length)` pairs.
    pub fn label_runs(&self) -> Vec<(Label, usize)> {
        let mut runs: Vec<(Label, usize)> = Vec::new();
        for &l in &self.labels {
            match runs.last_mut() {
                Some((last, n)) if *last == l => *n += 1,
                _ => runs.push((l, 1)),
            }
        }
        runs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::GaussianComponent;

    fn task(grid: usize, extent: f64, sigma: f64) -> TaskConfig {
        TaskConfig {
            fov: FieldOfView::square(extent, grid).unwrap(),
            lumpy: LumpyModelParams::reference(),
            signal: GaussianMixtureSignal::reference(),
            operator: OperatorParams::reference(),
            noise: NoiseModel::iid_gaussian(sigma).unwrap(),
        }
    }

    #[test]
    fn empty_state_projects_to_zero() {
        let t = TaskModel::new(task(16, 64.0, 1.0)).unwrap();
        let b = project_background(&LumpyState::empty(), t.lumpy(), &t.operator);
        assert!(b.values.iter().all(|&v| v == 0.0));
        assert_eq!(b.provenance, Provenance::NoiselessBackground);
    }

    #[test]
    fn lump_on_pixel_center_gives_closed_form_peak() {
        let t = TaskModel::new(task(64, 64.0, 1.0)).unwrap();
        let m = 20 * 64 + 11;
        let state = LumpyState::new(vec![t.fov().pixel_center(m)]);
        let b = project_background(&state, t.lumpy(), &t.operator);
        let expected = 1.2 * 36.0 * 7.8f64.powi(2) / (7.8f64.powi(2) + 2.5f64.powi(2));
        assert!((b.values[m] - expected).abs() < 1e-12);
        assert_eq!(b.values.argmax().0, m);
    }

    #[test]
    fn projection_is_linear_in_lumps() {
        let t = TaskModel::new(task(16, 64.0, 1.0)).unwrap();
        let a = LumpyState::new(vec![[10.0, 12.5]]);
        let b = LumpyState::new(vec![[40.2, 3.3]]);
        let pa = project_background(&a, t.lumpy(), &t.operator).values;
        let pb = project_background(&b, t.lumpy(), &t.operator).values;
        let pab = project_background(&a.merged(&b), t.lumpy(), &t.operator).values;
        assert!((pab - (pa + pb)).amax() < 1e-12);
    }

    #[test]
    fn isotropic_component_matches_scaled_lump() {
        let t = TaskModel::new(task(16, 64.0, 1.0)).unwrap();
        let s = 7.8;
        let sig = GaussianMixtureSignal::new(vec![GaussianComponent {
            amplitude: 0.3,
            center: [21.0, 33.0],
            width: [s, s],
        }])
        .unwrap();
        let ps = project_signal(&sig, &t.operator).values;
        let pb = project_background(&LumpyState::new(vec![[21.0, 33.0]]), t.lumpy(), &t.operator).values;
        assert!((ps - pb * (0.3 / 1.2)).amax() < 1e-12);
    }

    #[test]
    fn reference_signal_peaks_near_center() {
        let t = TaskModel::new(task(64, 64.0, 1.0)).unwrap();
        let m = t.signal.values.argmax().0;
        let c = t.fov().pixel_center(m);
        assert!((c[0] - 32.0).abs() <= 2.0 && (c[1] - 32.0).abs() <= 2.0, "{c:?}");
    }

    #[test]
    fn vanishing_noise_returns_input() {
        let t = TaskModel::new(task(8, 8.0, 1.0)).unwrap();
        let noise = NoiseModel::iid_gaussian(1e-12).unwrap();
        let g = add_noise(&t.signal, &noise, &mut stream(1, Domain::Noise, 0));
        assert!((g.values - &t.signal.values).amax() < 1e-10);
        assert_eq!(g.provenance, Provenance::Measured);
    }

    #[test]
    fn distinct_streams_give_distinct_noise() {
        let t = TaskModel::new(task(8, 8.0, 1.0)).unwrap();
        let a = add_noise(&t.signal, t.noise(), &mut stream(1, Domain::Noise, 0));
        let b = add_noise(&t.signal, t.noise(), &mut stream(1, Domain::Noise, 1));
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn dataset_has_balanced_labels_and_is_reproducible() {
        let t = TaskModel::new(task(8, 16.0, 1.0)).unwrap();
        let d = t.generate_dataset(7, 3).unwrap();
        assert_eq!(d.len(), 14);
        assert_eq!(d.count(Label::H0), 7);
        assert_eq!(d.count(Label::H1), 7);
        assert_eq!(d.label_runs(), vec![(Label::H0, 7), (Label::H1, 7)]);
        assert_eq!(d, t.generate_dataset(7, 3).unwrap());
        assert_ne!(d.pixels, t.generate_dataset(7, 4).unwrap().pixels);
    }

    #[test]
    fn mismatched_signal_image_is_rejected() {
        let cfg = task(8, 16.0, 1.0);
        let s = ImageVector {
            values: DVector::zeros(65),
            label: Label::Unlabeled,
            provenance: Provenance::NoiselessSignal,
        };
        assert!(matches!(
            TaskModel::with_signal_image(cfg, s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_per_class_is_rejected() {
        let t = TaskModel::new(task(8, 16.0, 1.0)).unwrap();
        assert!(t.generate_dataset(0, 1).is_err());
    }
}

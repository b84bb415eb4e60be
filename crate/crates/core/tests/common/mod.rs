//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the code under test for the quantity it checks.
#![allow(dead_code)]

use effchan::imaging::{NoiseModel, OperatorParams, TaskConfig, TaskModel};
use effchan::observers::IdealObserver;
use effchan::rng::{stream, Domain};
use effchan::task::{FieldOfView, GaussianComponent, GaussianMixtureSignal, LumpyModelParams, LumpyState};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_spd(m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, Domain::Synthetic, 0);
    let a = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * 0.05
}

pub fn random_vector(m: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream(seed, Domain::Synthetic, 1);
    DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// 8 x 8 unit-pitch task with weak lumps, so the lump count stays uncertain
/// under the posterior.
pub fn toy_task() -> TaskModel {
    TaskModel::new(TaskConfig {
        fov: FieldOfView::square(8.0, 8).unwrap(),
        lumpy: LumpyModelParams::new(1.0, 0.5, 1.5).unwrap(),
        signal: GaussianMixtureSignal::new(vec![GaussianComponent {
            amplitude: 0.5,
            center: [4.0, 4.0],
            width: [1.0, 1.0],
        }])
        .unwrap(),
        operator: OperatorParams { width: 1.0, height: 1.0 },
        noise: NoiseModel::iid_gaussian(1.0).unwrap(),
    })
    .unwrap()
}

/// Posterior `pr(N | y)` for `N = 0..=n_max` (prior truncated at `n_max`),
/// by midpoint quadrature of the lump positions on a `cells x cells`
/// lattice. `y` is whitened data, so `pr(y | θ) ∝ exp(-½‖y - W b(θ)‖²)`.
pub fn lattice_posterior_n(obs: &IdealObserver, task: &TaskModel, y: &DVector<f64>, cells: usize, n_max: usize) -> Vec<f64> {
    assert!(n_max <= 2, "quadrature oracle covers at most two lumps");
    let fov = task.fov();
    let lambda = task.lumpy().mean_count;
    let hx = fov.extent_x / cells as f64;
    let hy = fov.extent_y / cells as f64;
    let c = cells * cells;
    let mut r = DMatrix::zeros(y.len(), c);
    for i in 0..cells {
        for j in 0..cells {
            let p = [(j as f64 + 0.5) * hx, (i as f64 + 0.5) * hy];
            r.set_column(i * cells + j, &obs.whitened_background(&LumpyState::new(vec![p])));
        }
    }
    // log pr(y | θ) - log pr(y | ∅) for one lump at each site
    let a: Vec<f64> = (0..c)
        .map(|k| {
            let col = r.column(k);
            y.dot(&col) - 0.5 * col.norm_squared()
        })
        .collect();
    let log_mean_exp = |xs: &mut dyn Iterator<Item = f64>, n: f64| {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / n).ln()
    };
    let mut log_z = vec![0.0];
    if n_max >= 1 {
        log_z.push(lambda.ln() + log_mean_exp(&mut a.iter().copied(), c as f64));
    }
    if n_max >= 2 {
        let gram = r.tr_mul(&r);
        let mut pairs = (0..c).flat_map(|i| {
            let a = &a;
            let gram = &gram;
            (0..c).map(move |j| a[i] + a[j] - gram[(i, j)])
        });
        log_z.push(2.0 * lambda.ln() - 2f64.ln() + log_mean_exp(&mut pairs, (c * c) as f64));
    }
    let m = log_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_z.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalized post-burn-in lump-count histogram.
pub fn normalize(hist: &[u64]) -> Vec<f64> {
    let total: u64 = hist.iter().sum();
    hist.iter().map(|&h| h as f64 / total as f64).collect()
}

/// `n` + `n` images `b0 + n` / `b0 + s + n` sharing one fixed background.
pub fn fixed_background_dataset(task: &TaskModel, state: &LumpyState, n: usize, seed: u64) -> effchan::imaging::LabeledDataset {
    use effchan::imaging::{project_background, Label, LabeledDataset};
    let b0 = project_background(state, task.lumpy(), &task.operator).values;
    let m = task.num_pixels();
    let sd = task.noise().std_dev;
    let mut pixels = DMatrix::zeros(m, 2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for k in 0..2 * n {
        let mut rng = stream(seed, Domain::Noise, k as u64);
        let mut col = b0.clone();
        if k >= n {
            col += &task.signal.values;
        }
        for v in col.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
        pixels.set_column(k, &col);
        labels.push(if k < n { Label::H0 } else { Label::H1 });
    }
    LabeledDataset::new(task.fov().grid_size, pixels, labels, seed).unwrap()
}

/// `Φ(x)` by Simpson integration of the standard normal density.
pub fn std_normal_cdf(x: f64) -> f64 {
    // Simpson on [-12, x]; the density is negligible below -12
    let a = -12.0;
    if x <= a {
        return 0.0;
    }
    let n = 20_000;
    let h = (x - a) / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(a) + phi(x);
    for i in 1..n {
        let t = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * phi(t);
    }
    s * h / 3.0
}

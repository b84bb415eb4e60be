#![allow(dead_code)]

use effchan::imaging::NoiseModel;
use effchan::task::{FieldOfView, GaussianComponent, GaussianMixtureSignal};
use effchan_cli::ExperimentConfig;

/// A seconds-scale configuration: 16 x 16 images, tiny sweeps, short chains.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.fov = FieldOfView::square(16.0, 16).unwrap();
    c.signal = GaussianMixtureSignal::new(
        GaussianMixtureSignal::reference()
            .components()
            .iter()
            .map(|g| GaussianComponent {
                center: [g.center[0] - 24.0, g.center[1] - 24.0],
                ..*g
            })
            .collect(),
    )
    .unwrap();
    c.noise = NoiseModel::iid_gaussian(4.0).unwrap();
    c.sweep.channel_counts = vec![1, 2, 4];
    c.sweep.train_sizes = vec![40, 80];
    c.sweep.d_max = 4;
    let o = &mut c.observers;
    o.n_steps = Some(600);
    o.burn_in = Some(100);
    o.cio_channel_counts = vec![2, 4];
    o.cio_train_sizes = vec![40];
    o.io_chain_seeds = vec![1];
    o.cho_train_per_class = 60;
    o.ho_reference_backgrounds = 500;
    c.eval.test_per_class = 20;
    c.eval.n_boot = 100;
    c
}

/// Every regular file under `root`, relative path to contents, sorted.
pub fn snapshot(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

//! Experiment configuration and the two built-in presets.

use std::path::Path;

use effchan::channels::{ChannelMethod, DEFAULT_TAU_ORTH};
use effchan::evaluation::MIN_N_BOOT;
use effchan::imaging::{NoiseModel, OperatorParams, TaskConfig};
use effchan::observers::McmcConfig;
use effchan::task::{FieldOfView, GaussianComponent, GaussianMixtureSignal, LumpyModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fov: FieldOfView,
    pub lumpy: LumpyModelParams,
    pub signal: GaussianMixtureSignal,
    pub operator: OperatorParams,
    pub noise: NoiseModel,
    pub sweep: SweepConfig,
    pub observers: ObserverConfig,
    pub eval: EvalConfig,
    pub seeds: SeedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<ChannelMethod>,
    pub channel_counts: Vec<usize>,
    /// Total training images; half are signal-absent, half signal-present.
    pub train_sizes: Vec<usize>,
    /// Banks are built once at this size and sliced for smaller counts.
    #[serde(default = "default_d_max")]
    pub d_max: usize,
    #[serde(default = "default_tau")]
    pub tau_orth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub cho: bool,
    pub cio: bool,
    pub ho_reference: bool,
    pub io_reference: bool,
    /// `desk` or `paper`.
    pub mcmc_preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub cio_methods: Vec<ChannelMethod>,
    pub cio_channel_counts: Vec<usize>,
    pub cio_train_sizes: Vec<usize>,
    /// One IO reference run per chain seed.
    pub io_chain_seeds: Vec<u64>,
    /// Per-class size of the separate CHO training set.
    #[serde(default = "default_cho_train")]
    pub cho_train_per_class: usize,
    /// Noiseless backgrounds behind the HO reference covariance.
    #[serde(default = "default_ho_backgrounds")]
    pub ho_reference_backgrounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub test_per_class: usize,
    pub n_boot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
}

fn default_d_max() -> usize {
    30
}

fn default_tau() -> Option<f64> {
    Some(DEFAULT_TAU_ORTH)
}

fn default_cho_train() -> usize {
    5000
}

fn default_ho_backgrounds() -> usize {
    50_000
}

/// Reference signal moved by `-shift` along both axes.
fn shifted_reference_signal(shift: f64) -> GaussianMixtureSignal {
    let components = GaussianMixtureSignal::reference()
        .components()
        .iter()
        .map(|c| GaussianComponent {
            center: [c.center[0] - shift, c.center[1] - shift],
            ..*c
        })
        .collect();
    GaussianMixtureSignal::new(components).expect("shifted reference signal is valid")
}

const CHANNEL_COUNTS: [usize; 11] = [1, 2, 3, 5, 8, 10, 12, 15, 20, 25, 30];

impl ExperimentConfig {
    /// 32 x 32 grid over a 32-unit field with the reference signal moved to
    /// the middle; everything else at reference values.
    pub fn desk() -> Self {
        Self {
            fov: FieldOfView::square(32.0, 32).expect("valid fov"),
            lumpy: LumpyModelParams::reference(),
            signal: shifted_reference_signal(16.0),
            operator: OperatorParams::reference(),
            noise: NoiseModel::iid_gaussian(12.0).expect("valid noise"),
            sweep: SweepConfig {
                methods: vec![ChannelMethod::Cg, ChannelMethod::CgCmd, ChannelMethod::Pls],
                channel_counts: CHANNEL_COUNTS.to_vec(),
                train_sizes: vec![400, 2000],
                d_max: default_d_max(),
                tau_orth: default_tau(),
            },
            observers: ObserverConfig {
                cho: true,
                cio: true,
                ho_reference: true,
                io_reference: true,
                mcmc_preset: "desk".into(),
                n_steps: None,
                burn_in: None,
                cio_methods: vec![ChannelMethod::Cg, ChannelMethod::CgCmd, ChannelMethod::Pls],
                cio_channel_counts: vec![10, 20, 30],
                cio_train_sizes: vec![400, 2000],
                io_chain_seeds: vec![1, 2],
                cho_train_per_class: default_cho_train(),
                ho_reference_backgrounds: default_ho_backgrounds(),
            },
            eval: EvalConfig {
                test_per_class: 200,
                n_boot: 1000,
            },
            seeds: SeedConfig { master: 2024 },
        }
    }

    /// Full-scale study on the 64 x 64 grid.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.fov = FieldOfView::square(64.0, 64).expect("valid fov");
        c.signal = GaussianMixtureSignal::reference();
        c.noise = NoiseModel::iid_gaussian(15.0).expect("valid noise");
        c.sweep.train_sizes = vec![400, 1000, 2000, 5000, 10_000, 20_000];
        c.observers.mcmc_preset = "paper".into();
        c.observers.cio_train_sizes = vec![400, 5000];
        c.eval.test_per_class = 500;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(CliError::Config(format!(
                "unknown preset {other:?} (expected \"desk\" or \"paper\")"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn task(&self) -> TaskConfig {
        TaskConfig {
            fov: self.fov,
            lumpy: self.lumpy,
            signal: self.signal.clone(),
            operator: self.operator,
            noise: self.noise,
        }
    }

    /// Chain settings for chain seed `seed`, with any step overrides applied.
    pub fn mcmc(&self, seed: u64) -> Result<McmcConfig> {
        let mut m = McmcConfig::preset(&self.observers.mcmc_preset, seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(n) = self.observers.n_steps {
            m.n_steps = n;
        }
        if let Some(b) = self.observers.burn_in {
            m.burn_in = b;
        }
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }

    /// Largest channel count any observer asks of a bank.
    pub fn bank_size(&self) -> usize {
        self.sweep.d_max
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.task().validate().map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.sweep;
        if s.methods.is_empty() || s.channel_counts.is_empty() || s.train_sizes.is_empty() {
            return bad("sweep methods, channel_counts and train_sizes must be nonempty".into());
        }
        let pixels = self.fov.num_pixels();
        if s.d_max == 0 || s.d_max > pixels {
            return bad(format!("d_max must lie in 1..={pixels}, got {}", s.d_max));
        }
        if let Some(&d) = s.channel_counts.iter().find(|&&d| d == 0 || d > s.d_max) {
            return bad(format!("channel count {d} outside 1..={}", s.d_max));
        }
        if let Some(&n) = s.train_sizes.iter().find(|&&n| n < 4 || n % 2 == 1) {
            return bad(format!("training size {n} must be even and at least 4"));
        }
        if let Some(t) = s.tau_orth {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("tau_orth must be positive, got {t}"));
            }
        }
        let o = &self.observers;
        self.mcmc(0)?;
        if o.cio {
            if o.cio_methods.is_empty() || o.cio_channel_counts.is_empty() || o.cio_train_sizes.is_empty() {
                return bad("cio_methods, cio_channel_counts and cio_train_sizes must be nonempty".into());
            }
            if let Some(m) = o.cio_methods.iter().find(|m| !s.methods.contains(m)) {
                return bad(format!("CIO method {m} is not in the sweep methods"));
            }
            if let Some(n) = o.cio_train_sizes.iter().find(|n| !s.train_sizes.contains(n)) {
                return bad(format!("CIO training size {n} is not in the sweep training sizes"));
            }
            if let Some(&d) = o.cio_channel_counts.iter().find(|&&d| d == 0 || d > s.d_max) {
                return bad(format!("CIO channel count {d} outside 1..={}", s.d_max));
            }
        }
        if o.io_reference && o.io_chain_seeds.is_empty() {
            return bad("io_reference needs at least one chain seed".into());
        }
        if o.cho && o.cho_train_per_class <= s.d_max {
            return bad(format!(
                "cho_train_per_class ({}) must exceed d_max ({})",
                o.cho_train_per_class, s.d_max
            ));
        }
        if o.ho_reference && o.ho_reference_backgrounds < 2 {
            return bad("ho_reference_backgrounds must be at least 2".into());
        }
        if self.eval.test_per_class < 2 {
            return bad("test_per_class must be at least 2".into());
        }
        if self.eval.n_boot < MIN_N_BOOT {
            return bad(format!("n_boot must be at least {MIN_N_BOOT}"));
        }
        Ok(())
    }
}

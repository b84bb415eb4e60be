//! The four pipeline stages: generate, channels, observers, report.
//!
//! Every artifact is registered in the manifest under a key hashed from the
//! inputs that produced it (task block, seed, sizes and the hashes of
//! upstream files). A stage skips any artifact whose key and file hash are
//! current, so reruns are cheap and sweep order does not matter.

use std::path::{Path, PathBuf};

use effchan::channels::{build_cg_channels, build_pls_channels, channelize, ChannelBank, ChannelMethod};
use effchan::imaging::{LabeledDataset, TaskModel};
use effchan::observers::{apply_linear, cho_template, hotelling_template, IdealObserver, ObserverScores};
use effchan::persist::{
    config_hash, load_bank, load_covariance, load_dataset, read_array, save_bank, save_covariance,
    save_dataset, score_rows, write_array, write_scores_csv, ArrayMeta, DType,
};
use effchan::rng::derive_seed;
use effchan::statistics::{cmd_covariance, pooled_covariance, CovarianceAccumulator, MeanDifference};
use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Backgrounds per accumulation block for the HO reference covariance.
const HO_CHUNK: usize = 2000;

/// What a score file holds; stored as manifest attributes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreAttrs {
    /// `cho`, `cio`, `ho` or `io`.
    pub observer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ChannelMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// Channels actually used; below `channels` when the bank is short.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels_used: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_seed: Option<u64>,
}

impl ScoreAttrs {
    pub fn truncated(&self) -> bool {
        matches!((self.channels, self.channels_used), (Some(d), Some(u)) if u < d)
    }
}

pub fn scores_rel(id: &str) -> String {
    format!("scores/{id}.csv")
}

pub fn dataset_rel(name: &str) -> String {
    format!("data/{name}.f32")
}

pub fn bank_rel(method: ChannelMethod, n: usize) -> String {
    format!("banks/{method}_n{n}.f64")
}

fn stem(rel: &str) -> &str {
    rel.rsplit_once('.').map_or(rel, |(s, _)| s)
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub task: TaskModel,
    pub manifest: Manifest,
    task_key: String,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let task = TaskModel::new(config.task()).map_err(|e| CliError::Config(e.to_string()))?;
        let task_key = config_hash(&config.task())?;
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        Ok(Self {
            manifest: Manifest::open(out)?,
            config,
            task,
            task_key,
        })
    }

    pub fn root(&self) -> &Path {
        self.manifest.root()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root().join(rel)
    }

    pub fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seeds.master, label)
    }

    fn key(&self, inputs: serde_json::Value) -> Result<String> {
        Ok(config_hash(&json!({ "task": self.task_key, "inputs": inputs }))?)
    }

    fn upstream(&self, rel: &str) -> Result<String> {
        Ok(self.manifest.verified(rel)?.1.sha256.clone())
    }

    // ---- generate ----

    pub fn generate(&mut self) -> Result<()> {
        self.generate_test()?;
        let sizes = self.config.sweep.train_sizes.clone();
        let cmd = self.config.sweep.methods.contains(&ChannelMethod::CgCmd);
        for n in sizes {
            self.dataset_artifact(&format!("train_n{n}"), n / 2)?;
            if cmd {
                self.backgrounds_artifact(n)?;
            }
        }
        if self.config.observers.cho {
            self.dataset_artifact("cho_train", self.config.observers.cho_train_per_class)?;
        }
        Ok(())
    }

    pub fn generate_test(&mut self) -> Result<()> {
        self.dataset_artifact("test", self.config.eval.test_per_class)
    }

    fn dataset_artifact(&mut self, name: &str, per_class: usize) -> Result<()> {
        let rel = dataset_rel(name);
        let seed = self.seed(name);
        let key = self.key(json!({ "dataset": name, "per_class": per_class, "seed": seed }))?;
        if self.manifest.is_current(&rel, &key) {
            debug!("{rel} is current");
            return Ok(());
        }
        info!("generating {rel} ({per_class} images per class)");
        let ds = self.task.generate_dataset(per_class, seed)?;
        save_dataset(&self.path(stem(&rel)), &ds, Some(&key))?;
        self.manifest
            .register(&rel, "dataset", &key, json!({ "per_class": per_class, "seed": seed }))?;
        Ok(())
    }

    /// The noiseless backgrounds of the `train_n{n}` images: same seed, same
    /// background streams.
    fn backgrounds_artifact(&mut self, n: usize) -> Result<()> {
        let rel = dataset_rel(&format!("backgrounds_n{n}"));
        let seed = self.seed(&format!("train_n{n}"));
        let key = self.key(json!({ "backgrounds": n, "seed": seed }))?;
        if self.manifest.is_current(&rel, &key) {
            debug!("{rel} is current");
            return Ok(());
        }
        info!("generating {rel}");
        let bgs = self.task.generate_backgrounds(n, seed);
        let meta = ArrayMeta {
            kind: "backgrounds".into(),
            dtype: DType::F32,
            byte_order: "little".into(),
            records: 0,
            record_len: 0,
            sha256: String::new(),
            config_hash: Some(key.clone()),
            seed: Some(seed),
            grid_size: Some(self.config.fov.grid_size),
            labels: None,
            attributes: serde_json::Value::Null,
        };
        write_array(&self.path(stem(&rel)), &bgs, meta)?;
        self.manifest
            .register(&rel, "backgrounds", &key, json!({ "count": n, "seed": seed }))?;
        Ok(())
    }

    pub fn load_dataset(&self, name: &str) -> Result<LabeledDataset> {
        let rel = dataset_rel(name);
        let (path, _) = self.manifest.verified(&rel)?;
        Ok(load_dataset(Path::new(stem(&path.to_string_lossy())))?)
    }

    // ---- channels ----

    pub fn channels(&mut self) -> Result<()> {
        let mut failed = Vec::new();
        for n in self.config.sweep.train_sizes.clone() {
            for m in self.config.sweep.methods.clone() {
                let rel = bank_rel(m, n);
                let mut inputs = vec![self.upstream(&dataset_rel(&format!("train_n{n}")))?];
                if m == ChannelMethod::CgCmd {
                    inputs.push(self.upstream(&dataset_rel(&format!("backgrounds_n{n}")))?);
                }
                let s = &self.config.sweep;
                let key = self.key(json!({
                    "bank": m, "n_train": n, "d_max": s.d_max, "tau_orth": s.tau_orth, "upstream": inputs
                }))?;
                if self.manifest.is_current(&rel, &key) {
                    debug!("{rel} is current");
                    continue;
                }
                info!("building {rel}");
                match self.build_bank(m, n) {
                    Ok(bank) => {
                        save_bank(&self.path(stem(&rel)), &bank, Some(&key))?;
                        let attrs = json!({
                            "method": m, "n_train": n, "requested": self.config.sweep.d_max,
                            "channels": bank.num_channels(), "truncated": bank.log.truncated,
                        });
                        self.manifest.register(&rel, "channel_bank", &key, attrs)?;
                    }
                    Err(e) => {
                        warn!("{rel}: {e}");
                        self.manifest.record_failure(&rel, &e.to_string())?;
                        failed.push(format!("{rel}: {e}"));
                    }
                }
            }
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::Numerical(failed.join("; ")))
        }
    }

    fn build_bank(&self, m: ChannelMethod, n: usize) -> Result<ChannelBank> {
        let s = &self.config.sweep;
        let delta = MeanDifference::known_signal(&self.task.signal);
        let bank = match m {
            ChannelMethod::Cg => {
                let train = self.load_dataset(&format!("train_n{n}"))?;
                build_cg_channels(&pooled_covariance(&train)?, &delta, s.d_max, s.tau_orth)?
            }
            ChannelMethod::CgCmd => {
                let rel = dataset_rel(&format!("backgrounds_n{n}"));
                let (path, _) = self.manifest.verified(&rel)?;
                let (bgs, _) = read_array(Path::new(stem(&path.to_string_lossy())))?;
                let k = cmd_covariance(&bgs, Some(self.task.noise()), false)?;
                build_cg_channels(&k, &delta, s.d_max, s.tau_orth)?
            }
            ChannelMethod::Pls => {
                let train = self.load_dataset(&format!("train_n{n}"))?;
                build_pls_channels(&train, s.d_max)?
            }
        };
        Ok(bank)
    }

    pub fn load_bank(&self, m: ChannelMethod, n: usize) -> Result<ChannelBank> {
        let (path, _) = self.manifest.verified(&bank_rel(m, n))?;
        Ok(load_bank(Path::new(stem(&path.to_string_lossy())))?)
    }

    /// The first `d` channels, or all of them when the bank is shorter.
    pub fn bank_prefix(&self, m: ChannelMethod, n: usize, d: usize) -> Result<ChannelBank> {
        let bank = self.load_bank(m, n)?;
        let used = d.min(bank.num_channels());
        if used < d {
            warn!("{m} bank for n={n} has {used} channels; using all of them for D={d}");
        }
        Ok(bank.prefix(used)?)
    }

    // ---- observers ----

    /// Every score file this configuration calls for, in a fixed order.
    pub fn score_plan(&self) -> Vec<(String, ScoreAttrs)> {
        let c = &self.config;
        let o = &c.observers;
        let mut plan = Vec::new();
        if o.ho_reference {
            plan.push(("ho_reference".to_string(), ScoreAttrs { observer: "ho".into(), ..Default::default() }));
        }
        if o.cho {
            for &n in &c.sweep.train_sizes {
                for &m in &c.sweep.methods {
                    for &d in &c.sweep.channel_counts {
                        plan.push((format!("cho_{m}_n{n}_d{d}"), channel_attrs("cho", m, n, d)));
                    }
                }
            }
        }
        if o.io_reference {
            for &s in &o.io_chain_seeds {
                let attrs = ScoreAttrs {
                    observer: "io".into(),
                    chain_seed: Some(s),
                    ..Default::default()
                };
                plan.push((format!("io_reference_s{s}"), attrs));
            }
        }
        if o.cio {
            let seed = self.cio_chain_seed();
            for &n in &o.cio_train_sizes {
                for &m in &o.cio_methods {
                    for &d in &o.cio_channel_counts {
                        let mut attrs = channel_attrs("cio", m, n, d);
                        attrs.chain_seed = Some(seed);
                        plan.push((format!("cio_{m}_n{n}_d{d}"), attrs));
                    }
                }
            }
        }
        plan
    }

    fn cio_chain_seed(&self) -> u64 {
        self.seed("cio_chain")
    }

    pub fn observers(&mut self) -> Result<()> {
        let test_sha = self.upstream(&dataset_rel("test"))?;
        let test = self.load_dataset("test")?;
        let mut cho_train: Option<(LabeledDataset, String)> = None;
        let plan = self.score_plan();
        let total = plan.len();
        let mut failures = 0;
        for (i, (id, mut attrs)) in plan.into_iter().enumerate() {
            let rel = scores_rel(&id);
            let result = (|| -> Result<Option<ObserverScores>> {
                let key = self.score_key(&attrs, &test_sha)?;
                if self.manifest.is_current(&rel, &key) {
                    debug!("{rel} is current");
                    return Ok(None);
                }
                info!("[{}/{total}] {id}", i + 1);
                let scores = match attrs.observer.as_str() {
                    "ho" => self.ho_reference_scores(&test, &id)?,
                    "cho" => {
                        if cho_train.is_none() {
                            let sha = self.upstream(&dataset_rel("cho_train"))?;
                            cho_train = Some((self.load_dataset("cho_train")?, sha));
                        }
                        let train = &cho_train.as_ref().expect("loaded above").0;
                        self.cho_scores(&test, train, &mut attrs, &id)?
                    }
                    "io" => self.io_scores(&test, attrs.chain_seed.expect("io seed"), &id)?,
                    "cio" => self.cio_scores(&test, &mut attrs, &id)?,
                    other => unreachable!("unknown observer {other}"),
                };
                write_scores_csv(&self.path(&rel), &score_rows(&scores))?;
                self.manifest
                    .register(&rel, "scores", &key, serde_json::to_value(&attrs).expect("attrs"))?;
                Ok(Some(scores))
            })();
            if let Err(e) = result {
                if matches!(e, CliError::Io { .. }) {
                    return Err(e);
                }
                warn!("{id}: {e}");
                self.manifest.record_failure(&rel, &e.to_string())?;
                failures += 1;
            }
        }
        if total > 0 && failures == total {
            return Err(CliError::Numerical("every observer condition failed".into()));
        }
        Ok(())
    }

    fn score_key(&self, attrs: &ScoreAttrs, test_sha: &str) -> Result<String> {
        let mut upstream = vec![test_sha.to_string()];
        let mut extra = serde_json::Value::Null;
        match attrs.observer.as_str() {
            "ho" => {
                let o = &self.config.observers;
                extra = json!({ "backgrounds": o.ho_reference_backgrounds, "seed": self.seed("ho_backgrounds") });
            }
            "cho" => {
                upstream.push(self.upstream(&dataset_rel("cho_train"))?);
                upstream.push(self.upstream(&bank_rel(attrs.method.unwrap(), attrs.n_train.unwrap()))?);
            }
            "io" => extra = serde_json::to_value(self.config.mcmc(attrs.chain_seed.unwrap())?)?,
            "cio" => {
                upstream.push(self.upstream(&bank_rel(attrs.method.unwrap(), attrs.n_train.unwrap()))?);
                extra = serde_json::to_value(self.config.mcmc(attrs.chain_seed.unwrap())?)?;
            }
            _ => {}
        }
        let mut a = attrs.clone();
        a.channels_used = None;
        self.key(json!({ "scores": a, "upstream": upstream, "extra": extra }))
    }

    fn ho_reference_scores(&mut self, test: &LabeledDataset, id: &str) -> Result<ObserverScores> {
        let k = self.ho_covariance()?;
        let template = hotelling_template(&k, &MeanDifference::known_signal(&self.task.signal))?;
        Ok(apply_linear(&template, test, None, id)?)
    }

    /// CMD covariance from a large set of noiseless backgrounds.
    fn ho_covariance(&mut self) -> Result<effchan::statistics::CovarianceModel> {
        let rel = "refs/ho_cmd_cov.f64";
        let n = self.config.observers.ho_reference_backgrounds;
        let seed = self.seed("ho_backgrounds");
        let key = self.key(json!({ "ho_cmd_cov": n, "seed": seed }))?;
        if self.manifest.is_current(rel, &key) {
            return Ok(load_covariance(&self.path(stem(rel)))?);
        }
        info!("accumulating HO reference covariance from {n} backgrounds");
        let mut acc: Option<CovarianceAccumulator> = None;
        let mut done = 0;
        for chunk in 0.. {
            if done == n {
                break;
            }
            let count = HO_CHUNK.min(n - done);
            let bgs = self.task.generate_backgrounds(count, derive_seed(seed, &format!("chunk{chunk}")));
            acc.get_or_insert_with(|| CovarianceAccumulator::new(bgs.column_mean()))
                .push_columns(&bgs)?;
            done += count;
        }
        let k = acc.expect("n >= 2").finish_cmd(self.task.noise())?;
        save_covariance(&self.path(stem(rel)), &k, Some(&key))?;
        self.manifest.register(rel, "covariance", &key, json!({ "backgrounds": n, "seed": seed }))?;
        Ok(k)
    }

    fn cho_scores(
        &mut self,
        test: &LabeledDataset,
        train: &LabeledDataset,
        attrs: &mut ScoreAttrs,
        id: &str,
    ) -> Result<ObserverScores> {
        let (m, n, d) = (attrs.method.unwrap(), attrs.n_train.unwrap(), attrs.channels.unwrap());
        let bank = self.bank_prefix(m, n, d)?;
        attrs.channels_used = Some(bank.num_channels());
        let template = cho_template(&bank, train)?;
        let trel = format!("templates/{id}.f64");
        let meta = ArrayMeta {
            kind: "template".into(),
            dtype: DType::F64,
            byte_order: "little".into(),
            records: 0,
            record_len: 0,
            sha256: String::new(),
            config_hash: None,
            seed: None,
            grid_size: None,
            labels: None,
            attributes: json!({ "space": template.space }),
        };
        let w = DMatrix::from_column_slice(template.len(), 1, template.weights.as_slice());
        write_array(&self.path(stem(&trel)), &w, meta)?;
        self.manifest.register(&trel, "template", "", serde_json::to_value(&*attrs).expect("attrs"))?;
        Ok(apply_linear(&template, test, Some(&bank), id)?)
    }

    fn io_scores(&self, test: &LabeledDataset, chain_seed: u64, id: &str) -> Result<ObserverScores> {
        let cfg = self.config.mcmc(chain_seed)?;
        let obs = IdealObserver::image_space(&self.task)?;
        let t = run_chains(test.len(), id, |k| {
            let g: DVector<f64> = test.pixels.column(k).into_owned();
            Ok(obs.statistic_image(&g, &cfg, k as u64)?)
        })?;
        Ok(ObserverScores::from_labeled(id, &t, &test.labels)?)
    }

    fn cio_scores(&self, test: &LabeledDataset, attrs: &mut ScoreAttrs, id: &str) -> Result<ObserverScores> {
        let (m, n, d) = (attrs.method.unwrap(), attrs.n_train.unwrap(), attrs.channels.unwrap());
        let bank = self.bank_prefix(m, n, d)?;
        attrs.channels_used = Some(bank.num_channels());
        let cfg = self.config.mcmc(attrs.chain_seed.unwrap())?;
        let obs = IdealObserver::channel_space(&self.task, &bank)?;
        let v = channelize(&bank, &test.pixels)?;
        let t = run_chains(test.len(), id, |k| {
            Ok(obs.statistic_channels(&v.column(k).into_owned(), &cfg, k as u64)?)
        })?;
        Ok(ObserverScores::from_labeled(id, &t, &test.labels)?)
    }
}

fn channel_attrs(observer: &str, m: ChannelMethod, n: usize, d: usize) -> ScoreAttrs {
    ScoreAttrs {
        observer: observer.into(),
        method: Some(m),
        n_train: Some(n),
        channels: Some(d),
        ..Default::default()
    }
}

/// One chain per test image, with a progress line every 50 images.
fn run_chains(n: usize, id: &str, mut f: impl FnMut(usize) -> Result<f64>) -> Result<Vec<f64>> {
    let start = std::time::Instant::now();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        out.push(f(k)?);
        if (k + 1) % 50 == 0 {
            debug!("{id}: {}/{n} chains, {:.1?}", k + 1, start.elapsed());
        }
    }
    info!("{id}: {n} chains in {:.1?}", start.elapsed());
    Ok(out)
}

//! AUC tables from the score files.

use std::collections::BTreeMap;
use std::fs;

use effchan::channels::ChannelMethod;
use effchan::evaluation::{bootstrap_auc, snr_t};
use effchan::persist::{config_hash, read_scores_csv, scores_from_rows};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::pipeline::{scores_rel, Pipeline, ScoreAttrs};

pub const AUC_CSV: &str = "tables/auc.csv";
pub const AUC_JSON: &str = "tables/auc.json";
pub const ORDERING_CSV: &str = "tables/ordering.csv";

/// One row of the AUC table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub observer_id: String,
    pub observer: String,
    pub channel_method: Option<ChannelMethod>,
    #[serde(rename = "D")]
    pub d: Option<usize>,
    pub d_used: Option<usize>,
    pub n_train: Option<usize>,
    pub chain_seed: Option<u64>,
    pub auc: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub snr_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Some planned score files are missing or failed.
    pub incomplete: bool,
    pub missing: Vec<String>,
    pub failures: BTreeMap<String, String>,
    pub n_boot: usize,
    pub bootstrap_seed: u64,
    pub rows: Vec<AucRow>,
}

impl Report {
    pub fn find(&self, observer: &str, m: Option<ChannelMethod>, n: Option<usize>, d: Option<usize>) -> Option<&AucRow> {
        self.rows
            .iter()
            .find(|r| r.observer == observer && r.channel_method == m && r.n_train == n && r.d == d)
    }

    pub fn by_id(&self, id: &str) -> Option<&AucRow> {
        self.rows.iter().find(|r| r.observer_id == id)
    }
}

/// AUCs of every planned score file that exists. All observers share one
/// bootstrap seed, so replicate `b` resamples the same test images for each.
pub fn build_report(p: &Pipeline) -> Result<Report> {
    let n_boot = p.config.eval.n_boot;
    let seed = p.seed("bootstrap");
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for (id, attrs) in p.score_plan() {
        let rel = scores_rel(&id);
        let path = match p.manifest.verified(&rel) {
            Ok((path, _)) => path,
            Err(_) => {
                missing.push(id);
                continue;
            }
        };
        let stored: ScoreAttrs = serde_json::from_value(p.manifest.artifacts[&rel].attrs.clone())
            .map_err(|e| CliError::Missing(format!("{rel}: bad manifest attributes: {e}")))?;
        let scores = scores_from_rows(&id, &read_scores_csv(&path)?)?;
        let roc = bootstrap_auc(&scores, n_boot, seed)?;
        let (ci_low, ci_high) = roc.ci.expect("bootstrap interval");
        rows.push(AucRow {
            observer_id: id,
            observer: attrs.observer,
            channel_method: attrs.method,
            d: attrs.channels,
            d_used: stored.channels_used,
            n_train: attrs.n_train,
            chain_seed: attrs.chain_seed,
            auc: roc.auc,
            stderr: roc.auc_stderr.expect("bootstrap stderr"),
            ci_low,
            ci_high,
            snr_t: snr_t(&scores).ok().map(|s| s.snr_t),
        });
    }
    if rows.is_empty() {
        return Err(CliError::Missing(format!(
            "nothing to report: no score files under {}",
            p.root().join("scores").display()
        )));
    }
    let failures: BTreeMap<String, String> = p
        .manifest
        .failures
        .iter()
        .filter(|(k, _)| k.starts_with("scores/"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(Report {
        incomplete: !missing.is_empty(),
        missing,
        failures,
        n_boot,
        bootstrap_seed: seed,
        rows,
    })
}

/// Writes `tables/auc.csv`, `tables/auc.json` and `tables/ordering.csv`.
pub fn report(p: &mut Pipeline) -> Result<Report> {
    let r = build_report(p)?;
    let dir = p.root().join("tables");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let key = config_hash(&json!({ "rows": r.rows, "missing": r.missing }))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &r.rows {
        w.serialize(row).map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    write(p, AUC_CSV, &w.into_inner().expect("in-memory writer"))?;
    let text = serde_json::to_string_pretty(&r)? + "\n";
    write(p, AUC_JSON, text.as_bytes())?;
    write(p, ORDERING_CSV, &ordering_csv(&r))?;
    for rel in [AUC_CSV, AUC_JSON, ORDERING_CSV] {
        p.manifest.register(rel, "table", &key, serde_json::Value::Null)?;
    }
    if r.incomplete {
        log::warn!("report is incomplete; missing {}", r.missing.join(", "));
    }
    Ok(r)
}

fn write(p: &Pipeline, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = p.root().join(rel);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
}

#[derive(Serialize)]
struct OrderingRow {
    observer: String,
    n_train: usize,
    #[serde(rename = "D")]
    d: usize,
    auc_cg_cmd: Option<f64>,
    auc_cg: Option<f64>,
    auc_pls: Option<f64>,
    cg_cmd_ge_cg: Option<bool>,
    cg_ge_pls: Option<bool>,
    cg_cmd_ge_pls: Option<bool>,
}

/// Side-by-side AUCs of the three channel methods per condition.
fn ordering_csv(r: &Report) -> Vec<u8> {
    let mut keys: Vec<(String, usize, usize)> = r
        .rows
        .iter()
        .filter_map(|row| Some((row.observer.clone(), row.n_train?, row.d?)))
        .collect();
    keys.sort();
    keys.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    for (obs, n, d) in keys {
        let get = |m| r.find(&obs, Some(m), Some(n), Some(d)).map(|row| row.auc);
        let (cmd, cg, pls) = (get(ChannelMethod::CgCmd), get(ChannelMethod::Cg), get(ChannelMethod::Pls));
        let ge = |a: Option<f64>, b: Option<f64>| Some(a? >= b?);
        w.serialize(OrderingRow {
            observer: obs,
            n_train: n,
            d,
            auc_cg_cmd: cmd,
            auc_cg: cg,
            auc_pls: pls,
            cg_cmd_ge_cg: ge(cmd, cg),
            cg_ge_pls: ge(cg, pls),
            cg_cmd_ge_pls: ge(cmd, pls),
        })
        .expect("ordering row serializes");
    }
    w.into_inner().expect("in-memory writer")
}

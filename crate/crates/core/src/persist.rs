//! Artifact files: a raw little-endian array next to a `*.meta.json` sidecar.
//!
//! Datasets are stored as 32-bit floats, image-major with row-major pixels;
//! covariances and channel banks as 64-bit floats (banks channel-major). The
//! sidecar records shape, dtype, byte order and the SHA-256 of the raw file,
//! which is checked on load.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::{BuildLog, ChannelBank, ChannelMethod};
use crate::imaging::{Label, LabeledDataset};
use crate::observers::ObserverScores;
use crate::statistics::{CovarianceModel, CovarianceProvenance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn extension(&self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    fn width(&self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub kind: String,
    pub dtype: DType,
    pub byte_order: String,
    /// Number of records (images, channels, covariance columns).
    pub records: usize,
    /// Values per record.
    pub record_len: usize,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<(Label, usize)>>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub attributes: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

pub fn data_path(stem: &Path, dtype: DType) -> PathBuf {
    with_suffix(stem, dtype.extension())
}

pub fn meta_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "meta.json")
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn encode(values: &[f64], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    match dtype {
        DType::F32 => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn decode(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

/// Rounds every entry to the nearest `f32`, as a dataset round trip would.
pub fn quantize_f32(m: &mut DMatrix<f64>) {
    m.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

/// Writes `records` (one per column) and its sidecar; `meta` supplies the
/// descriptive fields, shape and hash are filled in here.
pub fn write_array(stem: &Path, records: &DMatrix<f64>, mut meta: ArrayMeta) -> Result<ArrayMeta> {
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_context(dir, e))?;
        }
    }
    let bytes = encode(records.as_slice(), meta.dtype);
    meta.byte_order = "little".into();
    meta.records = records.ncols();
    meta.record_len = records.nrows();
    meta.sha256 = sha256_hex(&bytes);
    let data = data_path(stem, meta.dtype);
    fs::write(&data, &bytes).map_err(|e| io_context(&data, e))?;
    let mpath = meta_path(stem);
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(&mpath, json).map_err(|e| io_context(&mpath, e))?;
    Ok(meta)
}

pub fn read_meta(stem: &Path) -> Result<ArrayMeta> {
    let mpath = meta_path(stem);
    let text = fs::read_to_string(&mpath).map_err(|e| io_context(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(&mpath, e.to_string()))
}

/// Reads an array, checking its size and hash against the sidecar.
pub fn read_array(stem: &Path) -> Result<(DMatrix<f64>, ArrayMeta)> {
    let meta = read_meta(stem)?;
    if meta.byte_order != "little" {
        return Err(format_err(&meta_path(stem), format!("unsupported byte order {}", meta.byte_order)));
    }
    let data = data_path(stem, meta.dtype);
    let bytes = fs::read(&data).map_err(|e| io_context(&data, e))?;
    let expected = meta.records * meta.record_len * meta.dtype.width();
    if bytes.len() != expected {
        return Err(format_err(&data, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let hash = sha256_hex(&bytes);
    if hash != meta.sha256 {
        return Err(format_err(&data, "content hash does not match sidecar"));
    }
    let values = decode(&bytes, meta.dtype);
    Ok((DMatrix::from_vec(meta.record_len, meta.records, values), meta))
}

fn base_meta(kind: &str, dtype: DType, config_hash: Option<&str>) -> ArrayMeta {
    ArrayMeta {
        kind: kind.into(),
        dtype,
        byte_order: "little".into(),
        records: 0,
        record_len: 0,
        sha256: String::new(),
        config_hash: config_hash.map(str::to_owned),
        seed: None,
        grid_size: None,
        labels: None,
        attributes: serde_json::Value::Null,
    }
}

fn expect_kind(stem: &Path, meta: &ArrayMeta, kind: &str) -> Result<()> {
    if meta.kind != kind {
        return Err(format_err(&meta_path(stem), format!("expected a {kind}, found {}", meta.kind)));
    }
    Ok(())
}

pub fn save_dataset(stem: &Path, ds: &LabeledDataset, config_hash: Option<&str>) -> Result<ArrayMeta> {
    let mut meta = base_meta("dataset", DType::F32, config_hash);
    meta.seed = Some(ds.seed);
    meta.grid_size = Some(ds.grid_size);
    meta.labels = Some(ds.label_runs());
    write_array(stem, &ds.pixels, meta)
}

pub fn load_dataset(stem: &Path) -> Result<LabeledDataset> {
    let (pixels, meta) = read_array(stem)?;
    expect_kind(stem, &meta, "dataset")?;
    let runs = meta.labels.clone().unwrap_or_default();
    let labels: Vec<Label> = runs.iter().flat_map(|&(l, n)| std::iter::repeat_n(l, n)).collect();
    let grid = meta
        .grid_size
        .ok_or_else(|| format_err(&meta_path(stem), "missing grid_size"))?;
    LabeledDataset::new(grid, pixels, labels, meta.seed.unwrap_or(0))
        .map_err(|e| format_err(&meta_path(stem), e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct BankAttributes {
    method: ChannelMethod,
    tau_orth: Option<f64>,
    build_log: BuildLog,
}

pub fn save_bank(stem: &Path, bank: &ChannelBank, config_hash: Option<&str>) -> Result<ArrayMeta> {
    let mut meta = base_meta("channel_bank", DType::F64, config_hash);
    meta.attributes = serde_json::to_value(BankAttributes {
        method: bank.method,
        tau_orth: bank.tau_orth,
        build_log: bank.log.clone(),
    })?;
    write_array(stem, &bank.matrix.transpose(), meta)
}

pub fn load_bank(stem: &Path) -> Result<ChannelBank> {
    let (records, meta) = read_array(stem)?;
    expect_kind(stem, &meta, "channel_bank")?;
    let attrs: BankAttributes =
        serde_json::from_value(meta.attributes).map_err(|e| format_err(&meta_path(stem), e.to_string()))?;
    Ok(ChannelBank {
        matrix: records.transpose(),
        method: attrs.method,
        tau_orth: attrs.tau_orth,
        log: attrs.build_log,
    })
}

#[derive(Serialize, Deserialize)]
struct CovarianceAttributes {
    provenance: CovarianceProvenance,
    n_samples: usize,
    noise_variance: Option<f64>,
}

pub fn save_covariance(stem: &Path, k: &CovarianceModel, config_hash: Option<&str>) -> Result<ArrayMeta> {
    let mut meta = base_meta("covariance", DType::F64, config_hash);
    meta.attributes = serde_json::to_value(CovarianceAttributes {
        provenance: k.provenance,
        n_samples: k.n_samples,
        noise_variance: k.noise_variance,
    })?;
    write_array(stem, &k.matrix, meta)
}

pub fn load_covariance(stem: &Path) -> Result<CovarianceModel> {
    let (matrix, meta) = read_array(stem)?;
    expect_kind(stem, &meta, "covariance")?;
    let attrs: CovarianceAttributes =
        serde_json::from_value(meta.attributes).map_err(|e| format_err(&meta_path(stem), e.to_string()))?;
    Ok(CovarianceModel {
        matrix,
        provenance: attrs.provenance,
        n_samples: attrs.n_samples,
        noise_variance: attrs.noise_variance,
    })
}

/// One row of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub image_id: usize,
    pub label: Label,
    pub observer_id: String,
    pub t: f64,
}

/// Flattens scores into rows; H0 images take ids `0..n0`, H1 images follow.
pub fn score_rows(scores: &ObserverScores) -> Vec<ScoreRow> {
    let n0 = scores.t_h0.len();
    let h0 = scores.t_h0.iter().enumerate().map(|(i, &t)| (i, Label::H0, t));
    let h1 = scores.t_h1.iter().enumerate().map(|(i, &t)| (n0 + i, Label::H1, t));
    h0.chain(h1)
        .map(|(image_id, label, t)| ScoreRow {
            image_id,
            label,
            observer_id: scores.observer_id.clone(),
            t,
        })
        .collect()
}

/// Writes score rows as CSV with header `image_id,label,observer_id,t`.
pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| format_err(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| format_err(path, e.to_string()))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_context(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| io_context(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| format_err(path, e.to_string())))
        .collect()
}

/// Regroups rows of one observer into H0/H1 score lists.
pub fn scores_from_rows(observer_id: &str, rows: &[ScoreRow]) -> Result<ObserverScores> {
    let mut out = ObserverScores::new(observer_id, Vec::new(), Vec::new());
    for row in rows.iter().filter(|r| r.observer_id == observer_id) {
        match row.label {
            Label::H0 => out.t_h0.push(row.t),
            Label::H1 => out.t_h1.push(row.t),
            Label::Unlabeled => return Err(Error::InvalidParameter("unlabeled score row".into())),
        }
    }
    Ok(out)
}

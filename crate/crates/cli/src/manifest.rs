//! Run manifest: every artifact under the output directory, with the key of
//! the inputs that produced it and the hash of its data file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use effchan::persist::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub kind: String,
    /// Hash of the inputs (config block, seed, upstream hashes).
    pub key: String,
    /// Hash of the data file on disk.
    pub sha256: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub attrs: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative data-file path to entry.
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    /// Conditions that failed, by artifact path, with the error text.
    #[serde(default)]
    pub failures: BTreeMap<String, String>,
    #[serde(skip)]
    root: PathBuf,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    /// Loads `root/manifest.json`, or starts an empty manifest.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let mut m = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?
        } else {
            Manifest::default()
        };
        m.root = root.to_path_buf();
        Ok(m)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn save(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        let path = self.root.join(MANIFEST_FILE);
        let tmp = self.root.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, text + "\n").map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
    }

    /// True when `rel` is registered under `key` and the file on disk still
    /// has the registered hash.
    pub fn is_current(&self, rel: &str, key: &str) -> bool {
        match self.artifacts.get(rel) {
            Some(e) if e.key == key => {
                matches!(file_sha256(&self.root.join(rel)), Ok(h) if h == e.sha256)
            }
            _ => false,
        }
    }

    /// Hashes the file and records it; clears any earlier failure.
    pub fn register(&mut self, rel: &str, kind: &str, key: &str, attrs: serde_json::Value) -> Result<String> {
        let sha256 = file_sha256(&self.root.join(rel))?;
        self.artifacts.insert(
            rel.to_string(),
            ArtifactEntry {
                kind: kind.into(),
                key: key.into(),
                sha256: sha256.clone(),
                attrs,
            },
        );
        self.failures.remove(rel);
        self.save()?;
        Ok(sha256)
    }

    pub fn record_failure(&mut self, rel: &str, error: &str) -> Result<()> {
        self.failures.insert(rel.to_string(), error.to_string());
        self.save()
    }

    /// Path of a registered artifact after checking its hash.
    pub fn verified(&self, rel: &str) -> Result<(PathBuf, &ArtifactEntry)> {
        let entry = self
            .artifacts
            .get(rel)
            .ok_or_else(|| CliError::Missing(format!("{rel} is not in the manifest; run the earlier stage first")))?;
        let path = self.root.join(rel);
        if !path.exists() {
            return Err(CliError::Missing(format!("{} does not exist", path.display())));
        }
        let found = file_sha256(&path)?;
        if found != entry.sha256 {
            return Err(CliError::Missing(format!(
                "{} changed since it was registered (sha256 {found}, manifest {})",
                path.display(),
                entry.sha256
            )));
        }
        Ok((path, entry))
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = (&'a String, &'a ArtifactEntry)> + 'a {
        self.artifacts.iter().filter(move |(_, e)| e.kind == kind)
    }
}

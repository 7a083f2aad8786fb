//! Run manifests: what produced a directory, and the hash of every file in
//! it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Which command wrote the directory.
    pub kind: String,
    pub tool_version: String,
    /// Effective configuration, enough to redo the run.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Hashes of files read, keyed by their role (paths differ between
    /// machines, roles do not).
    pub inputs: BTreeMap<String, String>,
    /// Hashes of files written, keyed by path relative to the directory.
    pub files: BTreeMap<String, String>,
    /// Record counts per partition, for dataset directories.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub partitions: BTreeMap<String, usize>,
    /// Seconds since the epoch, taken from `SOURCE_DATE_EPOCH` so that
    /// reruns stay byte-identical unless a stamp is asked for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Manifest {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            files: BTreeMap::new(),
            partitions: BTreeMap::new(),
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, file: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { file: file.to_path_buf(), line: e.line(), msg: e.to_string() })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text, &path)
    }

    /// Records the hash of `dir/rel`.
    pub fn add_file(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let h = hash_file(&dir.join(rel))?;
        self.files.insert(rel.to_string(), h);
        Ok(())
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let h = hash_file(path)?;
        self.inputs.insert(role.to_string(), h);
        Ok(())
    }

    /// Hash of the manifest text itself, used to tie models to their data.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// Checks that every listed file is present with the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (rel, expected) in &self.files {
            let path = dir.join(rel);
            if !path.is_file() {
                return Err(Error::Manifest(format!("{} is listed in the manifest but missing", path.display())));
            }
            let got = hash_file(&path)?;
            if &got != expected {
                return Err(Error::Manifest(format!("{} does not match its manifest hash", path.display())));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), self.to_json().as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

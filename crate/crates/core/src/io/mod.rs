//! Files on disk: series CSVs, run configuration, manifests and dataset
//! directories.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod series;
pub mod svg;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use config::{load_model, RunConfig, SplitConfig};
pub use dataset::{read_dataset, simulate_dataset, write_dataset, DatasetIndex, IndexEntry, LoadedDataset};
pub use manifest::{hash_file, sha256_hex, Manifest, MANIFEST_FILE};
pub use series::{parse_abc, parse_dq, read_series, write_dq};

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    manifest::write_file(path, bytes)
}

fn staging_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "out".into());
    name.push(".partial");
    out.with_file_name(name)
}

/// Runs `fill` on a scratch directory next to `out` and moves it into place
/// only if `fill` succeeds; the scratch directory is removed otherwise. An
/// existing `out` is replaced.
pub fn write_atomically<T>(out: &Path, fill: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let stage = staging_path(out);
    if stage.exists() {
        std::fs::remove_dir_all(&stage).map_err(|e| Error::io(format!("removing {}", stage.display()), e))?;
    }
    std::fs::create_dir_all(&stage).map_err(|e| Error::io(format!("creating {}", stage.display()), e))?;
    match fill(&stage) {
        Ok(v) => {
            if out.exists() {
                std::fs::remove_dir_all(out).map_err(|e| Error::io(format!("removing {}", out.display()), e))?;
            }
            std::fs::rename(&stage, out).map_err(|e| Error::io(format!("moving output to {}", out.display()), e))?;
            Ok(v)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&stage);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_runs_leave_nothing_behind() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("run");
        let err = write_atomically(&out, |d| {
            write_file(&d.join("a.txt"), b"x")?;
            Err::<(), _>(Error::Config("boom".into()))
        });
        assert!(err.is_err());
        assert!(!out.exists());
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);

        write_atomically(&out, |d| write_file(&d.join("a.txt"), b"x")).unwrap();
        write_atomically(&out, |d| write_file(&d.join("b.txt"), b"y")).unwrap();
        assert!(!out.join("a.txt").exists() && out.join("b.txt").exists());
    }
}

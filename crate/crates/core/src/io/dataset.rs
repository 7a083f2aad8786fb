//! Dataset directories:
//!
//! ```text
//! manifest.json     run manifest (config snapshot, seeds, hashes)
//! dataset.json      step, setpoints, record classes, seeds and partitions
//! records/*.csv     one dq series per record
//! generator.json    the source model, when data came from a normal form
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manifest::{write_file, Manifest};
use super::series::{parse_dq, write_dq};
use crate::error::{Error, Result};
use crate::normalform::Setpoints;
use crate::scenarios::{build_dataset, sub_seed, Dataset, Partition, Record, ScenarioClass, Source};

pub const INDEX_FILE: &str = "dataset.json";
pub const GENERATOR_FILE: &str = "generator.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub name: String,
    pub class: ScenarioClass,
    pub partition: Partition,
    pub seed: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub dt: f64,
    pub setpoints: Setpoints,
    /// Record counts per partition.
    pub counts: std::collections::BTreeMap<String, usize>,
    pub records: Vec<IndexEntry>,
}

/// Simulates the configured scenarios and splits them.
pub fn simulate_dataset(config: &RunConfig) -> Result<(Dataset, Source)> {
    config.validate()?;
    let source = config.source()?;
    let scenarios = config.scenarios()?;
    let ds = build_dataset(&scenarios, &source, &config.simulation, config.split.fractions(), config.seed)?;
    Ok((ds, source))
}

/// Writes `dataset` into `dir`, which must exist, and returns the manifest.
pub fn write_dataset(dir: &Path, dataset: &Dataset, config: &RunConfig, source: &Source) -> Result<Manifest> {
    let mut manifest = Manifest::new("dataset", serde_json::to_value(config).expect("config serializes"));
    manifest.seeds.insert("root".into(), config.seed);
    manifest.seeds.insert("optimizer".into(), config.ident_config().seed);
    for r in &dataset.records {
        manifest.seeds.insert(format!("scenario/{}", r.name), r.seed);
    }
    if let Some(g) = &config.generator {
        manifest.add_input("generator", g)?;
    }
    let mut entries = Vec::with_capacity(dataset.records.len());
    for (r, p) in dataset.records.iter().zip(&dataset.partitions) {
        let file = format!("records/{}.csv", r.name);
        write_file(&dir.join(&file), write_dq(&r.series).as_bytes())?;
        manifest.add_file(dir, &file)?;
        entries.push(IndexEntry { name: r.name.clone(), class: r.class, partition: *p, seed: r.seed, file });
    }
    let counts: std::collections::BTreeMap<String, usize> = Partition::SPLITS
        .iter()
        .chain(std::iter::once(&Partition::Ood))
        .map(|p| (p.label().to_string(), dataset.partitions.iter().filter(|q| *q == p).count()))
        .collect();
    manifest.partitions = counts.clone();
    let index = DatasetIndex { dt: dataset.dt, setpoints: dataset.setpoints, counts, records: entries };
    let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
    text.push('\n');
    write_file(&dir.join(INDEX_FILE), text.as_bytes())?;
    manifest.add_file(dir, INDEX_FILE)?;
    if let Source::NormalForm(model) = source {
        write_file(&dir.join(GENERATOR_FILE), model.to_json().as_bytes())?;
        manifest.add_file(dir, GENERATOR_FILE)?;
    }
    manifest.write(dir)?;
    Ok(manifest)
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub dataset: Dataset,
    pub manifest: Manifest,
}

impl LoadedDataset {
    /// The run configuration recorded at simulation time.
    pub fn config(&self) -> Result<RunConfig> {
        serde_json::from_value(self.manifest.config.clone())
            .map_err(|e| Error::Manifest(format!("{}: config snapshot: {e}", self.dir.display())))
    }
}

/// Reads a dataset directory. Record files are parsed before hashes are
/// checked so that a damaged CSV is reported by file and line.
pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = Manifest::read(dir)?;
    let index_path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&index_path).map_err(|e| Error::io(format!("reading {}", index_path.display()), e))?;
    let index: DatasetIndex = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { file: index_path.clone(), line: e.line(), msg: e.to_string() })?;
    let mut records = Vec::with_capacity(index.records.len());
    let mut partitions = Vec::with_capacity(index.records.len());
    for entry in &index.records {
        let path = dir.join(&entry.file);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let series = parse_dq(&text, &path)?;
        records.push(Record { name: entry.name.clone(), class: entry.class, seed: entry.seed, series });
        partitions.push(entry.partition);
    }
    manifest.verify(dir)?;
    let dataset = Dataset::new(index.setpoints, index.dt, records, partitions)
        .map_err(|e| Error::Manifest(format!("{}: {e}", dir.display())))?;
    Ok(LoadedDataset { dir: dir.to_path_buf(), dataset, manifest })
}

/// Optimizer seed recorded with a dataset, or one derived from its root.
pub fn optimizer_seed(manifest: &Manifest) -> u64 {
    manifest
        .seeds
        .get("optimizer")
        .copied()
        .unwrap_or_else(|| sub_seed(manifest.seeds.get("root").copied().unwrap_or(0), "optimizer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::Plant;
    use crate::scenarios::ProtocolConfig;

    fn small_config() -> RunConfig {
        RunConfig {
            seed: 1,
            plant: Some(Plant::Droop(Default::default())),
            protocol: ProtocolConfig {
                instances_per_class: 3,
                magnitude_cycles: 1,
                frequency_cycles: 1,
                rapid_duration: 4.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn write_read_round_trip() {
        let cfg = small_config();
        let (ds, source) = simulate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &ds, &cfg, &source).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.dataset, ds);
        assert_eq!(back.manifest, m);
        assert_eq!(back.config().unwrap(), cfg);
        assert_eq!(m.files.len(), ds.records.len() + 1);

        std::fs::remove_file(dir.path().join(INDEX_FILE)).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn damaged_csv_names_file_and_line() {
        let cfg = small_config();
        let (ds, source) = simulate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds, &cfg, &source).unwrap();
        let path = dir.path().join(format!("records/{}.csv", ds.records[0].name));
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[6] = "0.005,1,oops,0,0".into();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        match read_dataset(dir.path()).unwrap_err() {
            Error::Parse { file, line, .. } => {
                assert_eq!(file, path);
                assert_eq!(line, 7);
            }
            e => panic!("{e}"),
        }
    }
}

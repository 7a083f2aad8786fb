//! Run configuration (TOML).
//!
//! ```toml
//! seed = 1
//!
//! [plant]              # or: generator = "model.json"
//! kind = "droop"       # "droop" | "dvoc"; other keys as in DroopParams/DvocParams
//!
//! [protocol]           # ProtocolConfig
//! instances_per_class = 5
//!
//! [simulation]         # SimulationSettings
//! dt = 0.001
//!
//! [split]
//! train = 0.7
//! validation = 0.2
//! test = 0.1
//!
//! [identify]           # IdentConfig; its seed is derived from the root seed
//! n_ivars = 1
//!
//! [[scenarios]]        # optional explicit scripts replacing the protocol
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalform::{HwNormalForm, Setpoints};
use crate::plants::Plant;
use crate::scenarios::{default_scenarios, sub_seed, ProtocolConfig, Scenario, SimulationSettings, Source};
use crate::sysid::IdentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.7, validation: 0.2, test: 0.1 }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<Plant>,
    /// Normal-form model JSON used as the data source instead of a plant.
    /// Relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<PathBuf>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub identify: IdentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<Vec<Scenario>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            plant: Some(Plant::Droop(Default::default())),
            generator: None,
            protocol: ProtocolConfig::default(),
            simulation: SimulationSettings::default(),
            split: SplitConfig::default(),
            identify: IdentConfig::default(),
            scenarios: None,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses and validates. `file` labels errors and anchors relative
    /// paths.
    pub fn from_toml(text: &str, file: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            file: file.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        if let (Some(g), Some(dir)) = (&cfg.generator, file.parent()) {
            if g.is_relative() {
                cfg.generator = Some(dir.join(g));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {e}"));
        match (&self.plant, &self.generator) {
            (Some(_), Some(_)) => return Err(Error::Config("set only one of `plant` and `generator`".into())),
            (None, None) => return Err(Error::Config("one of `plant` or `generator` is required".into())),
            (Some(p), None) => p.validate().map_err(|e| field("plant", e))?,
            _ => {}
        }
        self.protocol.validate().map_err(|e| field("protocol", e))?;
        self.simulation.validate().map_err(|e| field("simulation", e))?;
        let f = self.split.fractions();
        if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split: fractions must be non-negative and sum to 1".into()));
        }
        self.identify.validate().map_err(|e| field("identify", e))?;
        if let Some(list) = &self.scenarios {
            if list.is_empty() {
                return Err(Error::Config("scenarios: list is empty".into()));
            }
            for s in list {
                s.validate().map_err(|e| field(&format!("scenarios.{}", s.name), e))?;
            }
        }
        Ok(())
    }

    /// The data source; reads the generator model when configured.
    pub fn source(&self) -> Result<Source> {
        match (&self.plant, &self.generator) {
            (Some(p), _) => Ok(Source::Plant(*p)),
            (None, Some(path)) => Ok(Source::NormalForm(load_model(path)?)),
            (None, None) => Err(Error::Config("one of `plant` or `generator` is required".into())),
        }
    }

    pub fn setpoints(&self) -> Result<Setpoints> {
        Ok(self.source()?.setpoints())
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        match &self.scenarios {
            Some(list) => Ok(list.clone()),
            None => default_scenarios(&self.protocol, self.seed),
        }
    }

    /// Identification knobs with the optimizer seed drawn from the root
    /// seed.
    pub fn ident_config(&self) -> IdentConfig {
        IdentConfig { seed: sub_seed(self.seed, "optimizer"), ..self.identify.clone() }
    }
}

pub fn load_model(path: &Path) -> Result<HwNormalForm> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    HwNormalForm::from_json(&text).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg = RunConfig::from_toml("seed = 1\n[plant]\nkind = \"droop\"\n", Path::new("c.toml")).unwrap();
        assert_eq!(cfg.seed, 1);
        assert!(matches!(cfg.plant, Some(Plant::Droop(_))));
        assert_eq!(cfg.scenarios().unwrap().len(), 15);
    }

    #[test]
    fn unknown_field_names_line() {
        let err = RunConfig::from_toml("seed = 1\n[plant]\nkind = \"droop\"\nk_x = 3\n", Path::new("c.toml")).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert!((2..=4).contains(&line), "{line}: {msg}");
                assert!(msg.contains("k_x"), "{msg}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = RunConfig::from_toml("[plant]\nkind = \"droop\"\ntau_p = -1.0\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("plant") && err.is_usage(), "{err}");
        let err = RunConfig::from_toml("[plant]\nkind = \"dvoc\"\n[split]\ntrain = 0.9\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("split"), "{err}");
        let err = RunConfig::from_toml("seed = 2\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig { seed: 9, ..Default::default() };
        let back = RunConfig::from_toml(&cfg.to_toml(), Path::new("c.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn explicit_scenarios() {
        let text = r#"
[plant]
kind = "droop"

[[scenarios]]
name = "steps"
class = "magnitude-steps"
duration = 4.0
seed = 3
network = { kind = "stiff-bus" }
events = [{ t = 1.0, kind = "slack-magnitude", value = 1.03 }]
"#;
        let cfg = RunConfig::from_toml(text, Path::new("c.toml")).unwrap();
        let s = cfg.scenarios().unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].events.len(), 1);
    }
}

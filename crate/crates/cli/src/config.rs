//! JSON run configuration with dotted-path overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tsrda_core::dsp::PreprocessConfig;
use tsrda_core::model::ModelSpec;
use tsrda_core::synth::SynthConfig;
use tsrda_core::training::TrainConfig;
use tsrda_core::tsrda::AugmentConfig;

#[derive(Debug, thiserror::Error)]
#[error("config error at `{path}`: {msg}")]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub runs: usize,
    pub seed: u64,
    pub validation_fraction: Option<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            runs: 5,
            seed: 0,
            validation_fraction: None,
        }
    }
}

/// Every tunable of every command. Sections a command does not use are
/// ignored by it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub augment: AugmentConfig,
    pub model: ModelSpec,
    /// Seeds the model's initial weights.
    pub model_seed: u64,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl Config {
    /// Reads `path` (a config document, or a run manifest whose `config`
    /// snapshot is used), applies `key=value` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, ConfigError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| {
                    ConfigError::new("<document>", format!("{}: {e}", p.display()))
                })?;
                match v {
                    Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => {
                        m.remove("config").expect("checked")
                    }
                    other => other,
                }
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Config = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.synth
            .validate()
            .map_err(|e| ConfigError::new("synth", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::new("train", e.to_string()))?;
        if !(0.0..1.0).contains(&self.split.test_fraction) {
            return Err(ConfigError::new("split.test_fraction", "must lie in [0, 1)"));
        }
        if self.ablation.runs == 0 {
            return Err(ConfigError::new("ablation.runs", "must be at least 1"));
        }
        if let Some(f) = self.ablation.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(ConfigError::new("ablation.validation_fraction", "must lie in (0, 1)"));
            }
        }
        if !(self.model.width_mult > 0.0 && self.model.width_mult.is_finite()) {
            return Err(ConfigError::new("model.width_mult", "must be positive"));
        }
        Ok(())
    }
}

/// Sets `a.b.c=value`, creating objects along the way. The value is parsed
/// as JSON when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new(spec, "override must look like key.path=value"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::new(key, "empty key segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let here = parts[..=i].join(".");
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::new(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        if !cur.is_object() {
            return Err(ConfigError::new(here, "not an object"));
        }
    }
    unreachable!("key has at least one segment")
}

//! TOML run configuration: training keys and preprocessing keys at the top
//! level, named exactly like the fields of [`TrainConfig`] and
//! [`PreprocessConfig`]. Missing keys take their defaults; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::preprocess::PreprocessConfig;
use crate::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub preprocess: PreprocessConfig,
}

fn known_keys() -> Vec<String> {
    let mut keys = Vec::new();
    for v in [
        toml::Value::try_from(TrainConfig::default()),
        toml::Value::try_from(PreprocessConfig::default()),
    ] {
        if let Ok(toml::Value::Table(t)) = v {
            keys.extend(t.keys().cloned());
        }
    }
    keys
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let known = known_keys();
        if let Some(k) = table.keys().find(|k| !known.contains(k)) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.train.validate().map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

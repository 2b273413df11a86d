//! Run configuration file.

use std::path::{Path, PathBuf};

use cpn_core::data::{generate_one, DataError, LabeledImage, SynthConfig};
use cpn_core::loss::LossWeights;
use cpn_core::model::{CpnConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::FormatError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Training dataset directory; generated from `synth` when absent.
    pub data: Option<PathBuf>,
    /// Held-out dataset directory; generated when absent.
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: CpnConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    /// Size of the generated held-out set.
    pub test_images: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: CpnConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            test_images: 100,
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    /// Parses a config file. Loss weights left out of `model` follow its order.
    pub fn from_json(text: &str, file: &Path) -> Result<Self, ConfigError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| FormatError::json(file, text, e))?;
        let weights_given = value
            .get("model")
            .and_then(|m| m.get("weights"))
            .is_some();
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| FormatError::json(file, text, e))?;
        if !weights_given {
            cfg.model.weights = LossWeights::default_for_order(cfg.model.order);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: String| ConfigError::Invalid(e);
        self.model.validate().map_err(|e| bad(e.to_string()))?;
        self.train.validate().map_err(|e| bad(e.to_string()))?;
        self.synth.validate().map_err(|e| bad(e.to_string()))?;
        self.model
            .check_image(self.synth.height, self.synth.width)
            .map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("serializable");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn training_images(&self) -> Result<Vec<LabeledImage>, DataError> {
        generate_range(&self.synth, 0, self.synth.images)
    }

    /// Held-out images, drawn from the streams after the training images.
    pub fn test_set(&self) -> Result<Vec<LabeledImage>, DataError> {
        generate_range(&self.synth, self.synth.images, self.test_images)
    }
}

pub fn generate_range(cfg: &SynthConfig, start: usize, count: usize) -> Result<Vec<LabeledImage>, DataError> {
    cfg.validate()?;
    (start..start + count).map(|i| generate_one(cfg, i)).collect()
}

//! TOML configuration files. Every key is optional; command-line flags
//! override file values, which override built-in defaults.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;
use wavefis_core::datagen::GenConfig;
use wavefis_core::series::{RegressionTarget, Task};
use wavefis_core::WaveletKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub attention: AttentionSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub task: Option<Task>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub ridge_lambda: Option<f64>,
    pub seed: Option<u64>,
    pub basis_candidates: Option<Vec<WaveletKind>>,
    pub validation_fraction: Option<f64>,
    pub early_stop_patience: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub window: Option<usize>,
    pub horizon: Option<usize>,
    pub depth: Option<usize>,
    pub rules: Option<usize>,
    /// Channel name the regression target is computed from.
    pub target_channel: Option<String>,
    pub regression_target: Option<RegressionTarget>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSection {
    pub d_k: Option<usize>,
    pub d_v: Option<usize>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let display = || path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: display(), source })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse { path: display(), source })
}

pub fn load_gen_config(path: &Path) -> Result<GenConfig, ConfigError> {
    read_toml(path)
}

pub fn load_train_file(path: &Path) -> Result<TrainFile, ConfigError> {
    read_toml(path)
}

//! Experiment config files.

use std::fs;
use std::path::{Path, PathBuf};

use ccmqd::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Config schema understood by this binary.
pub const SCHEMA_VERSION: u32 = 1;

fn default_true() -> bool {
    true
}

/// Which artefacts `run` writes besides the result JSON and ledger row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportToggles {
    /// `bloch_forward.csv` / `bloch_backward.csv` (1-qubit runs only).
    #[serde(default)]
    pub bloch: bool,
    /// `curves.csv` with loss and per-step fidelities.
    #[serde(default = "default_true")]
    pub curves: bool,
    /// `channels_seed<s>.json`, the forward channels of every seed.
    #[serde(default)]
    pub channels: bool,
    /// `trajectory_seed<s>.csv` with forward purity, entropy and fidelity.
    #[serde(default)]
    pub trajectory: bool,
}

impl Default for ExportToggles {
    fn default() -> Self {
        Self { bloch: false, curves: true, channels: false, trajectory: false }
    }
}

/// One experiment: a training config plus where and what to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub exports: ExportToggles,
    pub experiment: TrainConfig,
}

impl ExperimentConfig {
    /// Training config with recording switched on for the requested exports.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.experiment.clone();
        cfg.record_curves |= self.exports.curves;
        cfg.record_states |= self.exports.bloch;
        cfg
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_schema(self.schema_version)?;
        self.experiment.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

pub(crate) fn check_schema(version: u32) -> Result<(), CliError> {
    if version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "schema_version {version} is not supported (this build reads {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Reads and strictly parses a JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parses and validates an experiment config.
pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

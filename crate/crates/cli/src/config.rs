use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vpam::engine::{Method, PgmOptions};
use vpam::eval::ExperimentGrid;
use vpam::gem::GemOptions;
use vpam::{Error, Result};

fn default_delta() -> f64 {
    1e-6
}

fn default_rounds() -> usize {
    100
}

fn default_k() -> usize {
    3
}

/// Settings of a single `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Discretized CSV written by `prepare`.
    pub dataset: PathBuf,
    /// Defaults to `schema.json` next to the dataset, else inferred.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Defaults to `bins.json` next to the dataset when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_columns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_fraction: Option<f64>,
    pub method: Method,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Largest marginal order of the training and evaluation workloads.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Conditional generation for vjam-pgm.
    #[serde(default)]
    pub conditional: bool,
    #[serde(default)]
    pub pgm: PgmOptions,
    #[serde(default)]
    pub gem: GemOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.public_columns, self.public_fraction) {
            (Some(_), Some(_)) => Err(Error::Config("set either public_columns or public_fraction, not both".into())),
            (None, None) => Err(Error::Config("one of public_columns or public_fraction is required".into())),
            _ => Ok(()),
        }
    }
}

fn default_x() -> String {
    "epsilon".into()
}

/// Settings of a `sweep`: the grid plus where its data and outputs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Discretized CSV written by `prepare`.
    pub data: PathBuf,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Result column used as the x axis of plot series.
    #[serde(default = "default_x")]
    pub plot_x: String,
    #[serde(flatten)]
    pub grid: ExperimentGrid,
}

/// Reads JSON when the extension is `.json`, TOML otherwise.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

//! `--config` file: every key is optional and flags take precedence.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub method: Option<String>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma_scheme: Option<u8>,
    pub gamma: Option<f64>,
    pub intercept: Option<bool>,
    pub response: Option<String>,
    pub features: Option<Vec<String>>,
    pub log_transform: Option<bool>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub workers: Option<usize>,
    pub preset: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub criteria: Option<Vec<u8>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

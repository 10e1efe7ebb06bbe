use anyhow::{bail, Context, Result};
use cfcal_core::prior::HyperParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk configuration: hyperparameters plus an optional default seed.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ConfigFile {
    pub hyper: HyperParams,
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let cfg: ConfigFile = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).context("invalid TOML config")?,
        Some("json") => serde_json::from_str(&text).context("invalid JSON config")?,
        other => bail!("config must be .toml or .json, got {:?}", other),
    };
    cfg.hyper.validate()?;
    Ok(cfg)
}

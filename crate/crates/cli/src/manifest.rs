use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Run record written at the end of every command. Re-running the recorded
/// argv with the same seed reproduces every data output byte for byte
/// (timestamps and wall time excluded).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: Value,
    pub versions: Versions,
    pub wall_time_s: f64,
    pub timestamp_unix: u64,
    pub diagnostics: Option<Value>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub cfcal: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed,
            config,
            versions: Versions { cfcal: env!("CARGO_PKG_VERSION").to_string() },
            wall_time_s: 0.0,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            diagnostics: None,
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, dir: &Path, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        dir.join(name)
    }

    /// Atomic write: temp file then rename.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        let tmp = dir.join("manifest.json.tmp");
        std::fs::write(&tmp, body).context("writing manifest")?;
        std::fs::rename(&tmp, dir.join("manifest.json")).context("renaming manifest")?;
        Ok(())
    }

}

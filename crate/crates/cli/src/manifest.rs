//! Run manifest written next to every output set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use wildfire_core::config::KeyValues;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: BTreeMap::new(),
            inputs: vec![],
            outputs: vec![],
            started_unix: now(),
            finished_unix: 0.0,
        }
    }

    pub fn record_config(&mut self, kv: &KeyValues) {
        for k in kv.keys() {
            if let Some(v) = kv.raw(k) {
                self.config.insert(k.to_string(), v.to_string());
            }
        }
    }

    /// Stamps the finish time and writes the manifest to `path` atomically.
    pub fn finish(mut self, path: &Path) -> Result<PathBuf> {
        self.finished_unix = now();
        write_atomic(path, serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(path.to_path_buf())
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

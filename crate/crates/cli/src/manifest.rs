//! Run manifests: the resolved configuration, inputs, outputs and timings
//! of every command, serialized next to its outputs. Re-running a manifest
//! reproduces the outputs (bit-exactly with one thread).

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use unmix_core::{Result, UnmixError};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// The subcommand and its fully resolved arguments.
    pub command: Vec<String>,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_ms: f64,
    pub ms_per_pixel: Option<f64>,
    pub converged: Option<bool>,
    pub created_unix_ms: u128,
}

impl RunManifest {
    pub fn new(command: Vec<String>, seeds: Vec<u64>, threads: usize) -> Self {
        RunManifest {
            tool: "unmix".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seeds,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_ms: 0.0,
            ms_per_pixel: None,
            converged: None,
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).map_err(|e| {
            UnmixError::InvalidArgument(format!("manifest serialization failed: {e}"))
        })?;
        std::fs::write(Self::path_in(dir), body + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body).map_err(|e| UnmixError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

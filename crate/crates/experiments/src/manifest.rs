//! Run manifests: everything needed to reproduce a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use quadsqueeze::error::{Result, SimError};

use crate::csvio::io_err;

/// JSON record written next to every run's data files.
///
/// `config` holds the merged flag/config-file values; passing the manifest
/// back through `--config` replays the run and reproduces the CSVs
/// byte-for-byte. `wall_clock_s` is informational and exempt from that
/// guarantee.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    /// Distinct Fock dimensions actually used (empty for moment engines).
    pub fock_dims: Vec<usize>,
    /// Worst truncation-guard outcome across the run.
    pub truncation: String,
    pub seeds: Vec<u64>,
    pub wall_clock_s: f64,
    /// Data files written, relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Free-form notes; every NaN cell and skipped job gets one.
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            fock_dims: Vec::new(),
            truncation: "ok".to_string(),
            seeds: Vec::new(),
            wall_clock_s: 0.0,
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn record_dim(&mut self, dim: usize) {
        if dim > 0 && !self.fock_dims.contains(&dim) {
            self.fock_dims.push(dim);
            self.fock_dims.sort_unstable();
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| SimError::invalid(format!("manifest serialization: {e}")))?;
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| SimError::invalid(format!("{}: not a manifest: {e}", path.display())))
    }
}

/// Create the output directory if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

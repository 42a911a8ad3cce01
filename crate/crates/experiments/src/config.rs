//! Flat key=value configuration files, plus manifest replay.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use quadsqueeze::error::{Result, SimError};

use crate::csvio::io_err;
use crate::manifest::RunManifest;

/// Parse `key = value` lines; `#` starts a comment, blank lines are
/// ignored. Keys mirror the CLI flag names without the leading dashes
/// (`gamma-x = 9`).
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            SimError::invalid(format!("config line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(SimError::invalid(format!(
                "config line {}: empty key",
                lineno + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Load a config file. A JSON file is treated as a run manifest and its
/// echoed `config` block is extracted, so `--config manifest.json` replays
/// a previous run.
pub fn load(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if text.trim_start().starts_with('{') {
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| SimError::invalid(format!("{}: not a manifest: {e}", path.display())))?;
        Ok(manifest.config)
    } else {
        parse_flat(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_parse() {
        let map = parse_flat(
            "# comment\n\
             gamma-x = 9\n\
             engine=full  # trailing comment\n\
             \n\
             unitary = true\n",
        )
        .unwrap();
        assert_eq!(map["gamma-x"], "9");
        assert_eq!(map["engine"], "full");
        assert_eq!(map["unitary"], "true");
        assert_eq!(map.len(), 3);
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(parse_flat("gamma-x 9").is_err());
        assert!(parse_flat("= 9").is_err());
    }
}

//! Run manifest written next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// Resolved arguments keyed by long flag name; usable as a config file.
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| crownbench::Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of a file, or of every file below a directory.
pub fn digests(path: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| crownbench::Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if !p.to_string_lossy().ends_with("manifest.json") {
                digests(&p, out)?;
            }
        }
    } else {
        out.insert(path.display().to_string(), sha256_file(path)?);
    }
    Ok(())
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn add_inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
        for p in paths {
            digests(p, &mut self.inputs)?;
        }
        Ok(())
    }

    pub fn add_outputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
        for p in paths {
            digests(p, &mut self.outputs)?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| crownbench::Error::io(path, e))?;
        Ok(())
    }
}

/// `<file>.manifest.json`, or `<dir>/manifest.json` for directory outputs.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

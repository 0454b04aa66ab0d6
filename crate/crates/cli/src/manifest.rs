//! One JSON manifest per run: config, seed, artifact paths and hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub config_hash: String,
    pub inputs: BTreeMap<String, Artifact>,
    pub outputs: BTreeMap<String, Artifact>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects artifacts while a command runs.
pub struct Recorder {
    command: String,
    config: RunConfig,
    started: Instant,
    inputs: BTreeMap<String, Artifact>,
    outputs: BTreeMap<String, Artifact>,
}

impl Recorder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(name.to_string(), Artifact { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    pub fn output(&mut self, name: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.outputs.insert(name.to_string(), Artifact { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    /// Writes `<out_dir>/<command>.manifest.json` and returns its path.
    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let json = serde_json::to_vec(&self.config)?;
        let manifest = RunManifest {
            seed: self.config.seed,
            config_hash: Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect(),
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(format!("{}.manifest.json", manifest.command));
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

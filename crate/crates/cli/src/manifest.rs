use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance record written next to every output set.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub version: String,
    /// SHA-256 over the resolved configuration and the input file contents.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, out: &Path, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            inputs: Vec::new(),
            seed: None,
            output_dir: out.to_path_buf(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: String::new(),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn finish(mut self, out: &Path) -> Result<PathBuf> {
        self.config_hash = self.hash()?;
        let path = out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        // serde_json maps are ordered, so the config serializes canonically.
        h.update(serde_json::to_vec(&self.config)?);
        h.update(self.seed.unwrap_or_default().to_le_bytes());
        for input in &self.inputs {
            let bytes = fs::read(input).with_context(|| format!("reading {input}"))?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize()))
    }
}

//! `manifest.json`: the config hash, seed and content hash of every artifact
//! in an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    /// Artifact file name to its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Manifest {
            config_hash,
            seed,
            artifacts: BTreeMap::new(),
        }
    }

    /// Reads the manifest of `dir`, or `None` if there is none.
    pub fn load(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(dir, FILE, text.as_bytes())
    }

    pub fn matches(&self, config_hash: &str, seed: u64) -> bool {
        self.config_hash == config_hash && self.seed == seed
    }

    /// Fails unless the manifest was produced by this config and seed and
    /// every listed artifact still has its recorded hash.
    pub fn verify(&self, dir: &Path, config_hash: &str, seed: u64) -> Result<(), CliError> {
        if !self.matches(config_hash, seed) {
            return Err(CliError::Mismatch(format!(
                "artifacts in {} were produced by config {} with seed {}, not config {config_hash} with seed {seed}",
                dir.display(),
                self.config_hash,
                self.seed
            )));
        }
        for (name, hash) in &self.artifacts {
            let bytes = fs::read(dir.join(name)).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
            if sha256(&bytes) != *hash {
                return Err(CliError::Mismatch(format!("{name} changed since it was written")));
            }
        }
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_file(dir, name, bytes)?;
        self.artifacts.insert(name.to_string(), sha256(bytes));
        Ok(())
    }
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

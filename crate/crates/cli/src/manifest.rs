//! Run manifest: which inputs, seeds and config produced each artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    pub config_hash: String,
    pub params: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Self {
            tool: "cok".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash,
            stages: BTreeMap::new(),
        }
    }

    /// Loads the manifest in `dir`, or starts a fresh one.
    pub fn open(dir: &Path, seed: u64, config_hash: String) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut m = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
            Err(_) => Self::new(seed, config_hash.clone()),
        };
        m.seed = seed;
        m.config_hash = config_hash;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text).map_err(|e| CliError::Data(e.to_string()))
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(digest(&bytes))
}

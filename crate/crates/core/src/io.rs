//! JSON file helpers and the provenance header stamped on written outputs.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(format!("{what} {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse("output", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Provenance block recorded at the top of every output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

pub const FORMAT_VERSION: u32 = 1;

impl OutputHeader {
    pub fn new(config: &impl Serialize, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash(config),
            seed,
        }
    }
}

/// First 16 hex digits of the SHA-256 of the config's canonical JSON.
pub fn config_hash(config: &impl Serialize) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    hex::encode(&digest[..8])
}

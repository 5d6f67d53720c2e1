use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written once per invocation next to the command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the resolved parameters and every config input read.
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub wall_clock_ms: f64,
    /// Output file names relative to the output directory.
    pub outputs: Vec<String>,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("msf".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "frame_format".to_string(),
            msf_core::io::FRAME_VERSION.to_string(),
        ),
    ])
}

pub fn config_hash<P: Serialize>(params: &P, inputs: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(params).expect("parameters serialize"));
    for bytes in inputs {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

//! Run manifest: a JSON record of what produced an output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FormatError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// SHA-256 of the effective config as written to the output directory.
    pub config_sha256: String,
    pub seed: u64,
    pub outputs: Vec<OutputRecord>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn record_output(&mut self, relative: &str, bytes: &[u8]) {
        self.outputs.retain(|o| o.path != relative);
        self.outputs.push(OutputRecord {
            path: relative.to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn record_timing(&mut self, stage: &str, seconds: f64) {
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_json()).map_err(|e| FormatError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| FormatError::Manifest(e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn json_round_trip() {
        let mut m = RunManifest::new("simulate", "[seed]\nvalue = 1\n", 1);
        m.record_output("map.egrid", b"x");
        m.record_output("map.egrid", b"y");
        m.record_timing("run", 0.5);
        assert_eq!(m.outputs.len(), 1);
        let back: RunManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}

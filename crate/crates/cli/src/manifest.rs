//! Run manifests: every output file with its SHA-256, plus provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub group: Option<String>,
    pub config_hash: Option<String>,
    pub seed: u64,
    /// Path (relative to the output directory where possible) → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock milliseconds per stage or subject.
    pub timings_ms: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    /// Subject id → error message.
    pub failures: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, group: Option<String>, config_hash: Option<String>, seed: u64) -> Self {
        Self { tool_version: TOOL_VERSION.into(), command: command.into(), group, config_hash, seed, ..Default::default() }
    }

    pub fn add_input(&mut self, path: &Path, base: &Path) -> CliResult<String> {
        let h = hash_file(path)?;
        self.inputs.insert(relative(path, base), h.clone());
        Ok(h)
    }

    pub fn add_output(&mut self, path: &Path, base: &Path) -> CliResult<String> {
        let h = hash_file(path)?;
        self.outputs.insert(relative(path, base), h.clone());
        Ok(h)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("manifest serializes"))?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| crate::error::CliError::Fatal(format!("{}: {e}", path.display())))
    }
}

/// `path` relative to `base` when it lies below it, else as given.
pub fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).map(PathBuf::from).unwrap_or_else(|_| path.to_path_buf()).to_string_lossy().replace('\\', "/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a").join("x.txt");
        std::fs::create_dir_all(f.parent().unwrap()).unwrap();
        std::fs::write(&f, b"abc").unwrap();
        let mut m = RunManifest::new("cohort", None, Some("h".into()), 3);
        m.add_output(&f, dir.path()).unwrap();
        assert_eq!(m.outputs["a/x.txt"], sha256_hex(b"abc"));
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        assert_eq!(RunManifest::read(&p).unwrap(), m);
    }
}

//! Pipeline configuration file (TOML).
//!
//! ```toml
//! schema_version = 1
//! seed = 0
//!
//! [paths]
//! subjects = "subjects.csv"
//! image_root = "images"
//! output_root = "out"
//!
//! [labels]
//! 3 = "liver"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bodyatlas::atlas::InverseVariant;
use bodyatlas::preprocess::PreprocessConfig;
use bodyatlas::registration::RegConfig;
use bodyatlas::vbm::VbmConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::sha256_hex;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub subjects: PathBuf,
    pub image_root: PathBuf,
    pub output_root: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtlasSection {
    pub inverse_variant: InverseVariant,
    /// Structures to build probability atlases and metrics for; all named
    /// labels of the reference when empty.
    pub structures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub paths: Paths,
    /// Label id → structure name for every label file.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub registration: RegConfig,
    #[serde(default)]
    pub atlas: AtlasSection,
    #[serde(default)]
    pub vbm: VbmConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, validates and resolves paths against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.subjects = base.join(&cfg.paths.subjects);
        cfg.paths.image_root = base.join(&cfg.paths.image_root);
        cfg.paths.output_root = base.join(&cfg.paths.output_root);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if !self.paths.subjects.is_file() {
            return Err(CliError::Config(format!("subject table {} does not exist", self.paths.subjects.display())));
        }
        if !self.paths.image_root.is_dir() {
            return Err(CliError::Config(format!("image root {} is not a directory", self.paths.image_root.display())));
        }
        self.label_names()?;
        let section = |name: &str, r: bodyatlas::Result<()>| r.map_err(|e| CliError::Config(format!("[{name}] {e}")));
        section("preprocess", self.preprocess.validate())?;
        section("registration", self.registration.validate())?;
        section("vbm", self.vbm.validate())?;
        Ok(())
    }

    pub fn label_names(&self) -> CliResult<BTreeMap<u16, String>> {
        self.labels
            .iter()
            .map(|(k, v)| match k.parse::<u16>() {
                Ok(id) if id > 0 => Ok((id, v.clone())),
                _ => Err(CliError::Config(format!("[labels] key `{k}` is not a label id in 1..=65535"))),
            })
            .collect()
    }

    /// Hash of everything that affects results; the worker count and the
    /// location of the files do not.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.paths = Paths { subjects: file_name(&c.paths.subjects), image_root: PathBuf::new(), output_root: PathBuf::new() };
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn file_name(p: &Path) -> PathBuf {
    p.file_name().map(PathBuf::from).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[paths]
subjects = "s.csv"
image_root = "."
output_root = "out"
"#;

    #[test]
    fn minimal_parses_with_defaults() {
        let c = PipelineConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.registration, RegConfig::default());
        assert_eq!(c.seed, 0);
        assert_eq!(PipelineConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse(&format!("{MINIMAL}\n[registration]\nlambdaa = 1.0\n")).is_err());
        assert!(PipelineConfig::parse(&format!("typo = 1\n{MINIMAL}")).is_err());
        assert!(PipelineConfig::parse(&format!("{MINIMAL}\n[paths2]\n")).is_err());
    }

    #[test]
    fn validation_catches_bad_sections_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.csv"), "").unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        PipelineConfig::load(&path).unwrap();
        std::fs::write(&path, MINIMAL.replace("schema_version = 1", "schema_version = 2")).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(CliError::Config(_))));
        std::fs::write(&path, format!("{MINIMAL}\n[registration]\nlevels = 2\n")).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(CliError::Config(_))));
        std::fs::write(&path, MINIMAL.replace("s.csv", "missing.csv")).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(CliError::Config(_))));
        std::fs::write(&path, format!("{MINIMAL}\n[labels]\nzero = \"x\"\n")).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_ignores_workers_and_location() {
        let a = PipelineConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.workers = Some(4);
        b.paths.output_root = "/elsewhere".into();
        b.paths.subjects = "/data/s.csv".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}

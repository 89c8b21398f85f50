//! Run manifest: one document per output directory recording the config
//! hash, tool version, and the hashed outputs of every completed stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.toml";

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// One output file of a stage, addressed relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutput {
    pub path: String,
    pub sha256: String,
}

/// One completed pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub wall_ms: u64,
    #[serde(default)]
    pub output: Vec<StageOutput>,
}

/// Reproducibility record for a run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub config_sha256: String,
    #[serde(default)]
    pub stage: Vec<Stage>,
}

impl RunManifest {
    pub fn new(config_sha256: &str) -> Self {
        RunManifest {
            tool: format!("rsm {}", env!("CARGO_PKG_VERSION")),
            config_sha256: config_sha256.to_string(),
            stage: Vec::new(),
        }
    }

    /// Load the manifest in `dir`, or start a fresh one when absent.
    pub fn load_or_new(dir: &Path, config_sha256: &str) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(RunManifest::new(config_sha256));
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::file(path.display().to_string(), e))?;
        let mut manifest: RunManifest = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        manifest.config_sha256 = config_sha256.to_string();
        Ok(manifest)
    }

    /// Load the manifest in `dir`, failing when it does not exist.
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::file(path.display().to_string(), e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Replace or append a stage record, keeping stages in completion
    /// order, then rewrite the manifest file.
    pub fn record_stage(&mut self, dir: &Path, stage: Stage) -> Result<(), CliError> {
        match self.stage.iter_mut().find(|s| s.name == stage.name) {
            Some(slot) => *slot = stage,
            None => self.stage.push(stage),
        }
        let text = toml::to_string(self)
            .map_err(|e| CliError::Validation(format!("manifest serialization: {e}")))?;
        let path = dir.join(MANIFEST_NAME);
        fs::write(&path, text).map_err(|e| CliError::file(path.display().to_string(), e))
    }

    pub fn find_stage(&self, name: &str) -> Option<&Stage> {
        self.stage.iter().find(|s| s.name == name)
    }
}

/// Record an output file's run-relative path and content hash.
pub fn hash_output(dir: &Path, rel: &str) -> Result<StageOutput, CliError> {
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| CliError::file(path.display().to_string(), e))?;
    Ok(StageOutput {
        path: rel.to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Write `bytes` under the run directory, creating parents, and return the
/// hashed stage output entry.
pub fn write_output(dir: &Path, rel: &str, bytes: &[u8]) -> Result<StageOutput, CliError> {
    let path: PathBuf = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::file(parent.display().to_string(), e))?;
    }
    fs::write(&path, bytes).map_err(|e| CliError::file(path.display().to_string(), e))?;
    Ok(StageOutput {
        path: rel.to_string(),
        sha256: sha256_hex(bytes),
    })
}

//! Run manifests: what was run, with which settings, and what it produced.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pop_core::{PopError, Result};

use crate::kv::Pairs;

pub const MANIFEST_FORMAT: &str = "pop-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    /// Fully resolved settings; replaying them reproduces the run.
    pub config: Pairs,
    pub seed: u64,
    pub workers: usize,
    pub code_version: String,
    /// Checkpoint files read by the command (manifest and blob).
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path).map_err(|e| PopError::Artifact(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileHash {
        path: path.to_string_lossy().into_owned(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        config: Pairs,
        seed: u64,
        workers: usize,
        inputs: Vec<FileHash>,
        root: &Path,
        files: &[String],
        elapsed: Duration,
    ) -> Result<Self> {
        let outputs = files
            .iter()
            .map(|rel| {
                let mut h = sha256_file(&root.join(rel))?;
                h.path = rel.clone();
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            config,
            seed,
            workers,
            code_version: env!("CARGO_PKG_VERSION").into(),
            inputs,
            outputs,
            wall_clock_seconds: elapsed.as_secs_f64(),
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::write(root.join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read(&path).map_err(|e| PopError::Artifact(format!("cannot read {}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_slice(&text)
            .map_err(|e| PopError::Artifact(format!("malformed run manifest {}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(PopError::Artifact(format!(
                "unsupported run manifest {} v{} (expected {MANIFEST_FORMAT} v{MANIFEST_VERSION})",
                m.format, m.version
            )));
        }
        Ok(m)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.config.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

//! Policy checkpoints: a JSON manifest next to a little-endian f64 blob.
//!
//! `name.json` holds the format version, the policy config and the parameter
//! layout; `name.bin` holds the raw values in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{PopError, Result};
use crate::policy::{PolicyConfig, TransformerPolicy};

pub const CHECKPOINT_FORMAT: &str = "pop-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub iteration: u64,
    pub policy: PolicyConfig,
    pub tensors: Vec<TensorEntry>,
    pub blob: String,
    pub blob_bytes: usize,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

fn artifact(msg: impl Into<String>) -> PopError {
    PopError::Artifact(msg.into())
}

/// Paths of the manifest and blob for a checkpoint stem.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Write `stem.json` and `stem.bin`; returns both paths.
pub fn save_checkpoint(
    stem: &Path,
    policy: &TransformerPolicy,
    iteration: u64,
    meta: BTreeMap<String, String>,
) -> Result<(PathBuf, PathBuf)> {
    let (json_path, bin_path) = checkpoint_paths(stem);
    let mut blob = Vec::with_capacity(policy.parameter_count() * 8);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for p in policy.params().iter() {
        for v in &p.value {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.shape.clone(), offset, len: p.value.len() });
        offset += p.value.len();
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        iteration,
        policy: policy.config().clone(),
        tensors,
        blob: bin_path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        blob_bytes: blob.len(),
        meta,
    };
    if let Some(dir) = json_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&bin_path, &blob)?;
    fs::write(&json_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok((json_path, bin_path))
}

/// Load a checkpoint from its manifest path (or stem).
pub fn load_checkpoint(path: &Path) -> Result<(TransformerPolicy, CheckpointManifest)> {
    let json_path = path.with_extension("json");
    let text = fs::read(&json_path).map_err(|e| artifact(format!("cannot read {}: {e}", json_path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&text)
        .map_err(|e| artifact(format!("malformed checkpoint manifest {}: {e}", json_path.display())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(artifact(format!("not a checkpoint manifest: format '{}'", manifest.format)));
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(artifact(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    manifest.policy.validate().map_err(|e| artifact(format!("checkpoint policy config: {e}")))?;
    let bin_path = json_path.with_file_name(&manifest.blob);
    let blob = fs::read(&bin_path).map_err(|e| artifact(format!("cannot read {}: {e}", bin_path.display())))?;
    if blob.len() != manifest.blob_bytes || blob.len() % 8 != 0 {
        return Err(artifact(format!(
            "blob {} has {} bytes, manifest says {}",
            bin_path.display(),
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let values: Vec<f64> =
        blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();

    // layout must match what this config builds
    let template = TransformerPolicy::new(manifest.policy.clone(), 0).map_err(|e| artifact(e.to_string()))?;
    if template.params().len() != manifest.tensors.len() {
        return Err(artifact(format!(
            "checkpoint has {} tensors, architecture expects {}",
            manifest.tensors.len(),
            template.params().len()
        )));
    }
    let mut store = ParamStore::new();
    for (entry, expected) in manifest.tensors.iter().zip(template.params().iter()) {
        if entry.name != expected.name || entry.shape != expected.shape {
            return Err(artifact(format!(
                "tensor '{}' {:?} does not match architecture tensor '{}' {:?}",
                entry.name, entry.shape, expected.name, expected.shape
            )));
        }
        let end = entry.offset + entry.len;
        if end > values.len() || entry.len != expected.value.len() {
            return Err(artifact(format!("tensor '{}' lies outside the blob", entry.name)));
        }
        store.add(entry.name.clone(), entry.shape.clone(), values[entry.offset..end].to_vec());
    }
    Ok((TransformerPolicy::from_params(manifest.policy.clone(), store), manifest))
}

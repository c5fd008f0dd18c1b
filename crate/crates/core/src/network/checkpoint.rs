//! Checkpoint directories: `manifest.json` plus one tensor dump per
//! parameter and optimizer cache.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Network;
use super::spec::NetworkSpec;
use crate::hash::sha256_hex;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mricnn-checkpoint/1";
pub const CHECKPOINT_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    /// Architecture in its text form.
    pub spec: String,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    net: &Network,
    dir: &Path,
    step: u64,
    seed: u64,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in net.named_tensors() {
        let file = format!("{name}.tensor");
        let bytes = t.to_bytes();
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name,
            file,
            shape: t.shape().to_vec(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        spec: net.spec().to_string(),
        step,
        seed,
        tensors,
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::CheckpointMismatch(format!(
            "unknown checkpoint format `{}`",
            m.format
        )));
    }
    Ok(m)
}

/// Restores a network. Fails with [`Error::CheckpointMismatch`] when the
/// stored architecture differs from `expected`, a tensor has the wrong shape,
/// a file fails its hash, or a parameter is missing.
pub fn load_checkpoint(
    dir: &Path,
    expected: Option<&NetworkSpec>,
) -> Result<(Network, CheckpointManifest)> {
    let manifest = read_checkpoint_manifest(dir)?;
    let spec: NetworkSpec = manifest
        .spec
        .parse()
        .map_err(|e| Error::CheckpointMismatch(format!("stored architecture is invalid: {e}")))?;
    if let Some(exp) = expected {
        if *exp != spec {
            return Err(Error::CheckpointMismatch(format!(
                "architecture differs:\n  checkpoint: {spec}\n  expected:   {exp}"
            )));
        }
    }
    let mut net = Network::new(spec, manifest.seed)?;
    let wanted: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
    for name in &wanted {
        let entry = manifest
            .tensors
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor `{name}`")))?;
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::CheckpointMismatch(format!(
                "{}: content hash mismatch",
                entry.file
            )));
        }
        let loaded = Tensor::from_bytes(&bytes)?;
        let slot = net.named_tensor_mut(name).expect("name from named_tensors");
        if loaded.shape() != slot.shape() || entry.shape != slot.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "`{name}` has shape {:?}, architecture needs {:?}",
                loaded.shape(),
                slot.shape()
            )));
        }
        *slot = loaded;
    }
    if manifest.tensors.len() != wanted.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {} tensors, architecture has {}",
            manifest.tensors.len(),
            wanted.len()
        )));
    }
    Ok((net, manifest))
}

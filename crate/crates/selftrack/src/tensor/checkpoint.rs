//! Checkpoints: `manifest.json` (names, shapes, byte offsets) next to
//! `params.bin`, a blob of little-endian f64 values in manifest order.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamStore;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Number of bytes.
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub params: Vec<CheckpointEntry>,
}

pub fn save_checkpoint(store: &ParamStore, dir: &Path) -> io::Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let t = store.get(id);
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        params.push(CheckpointEntry {
            name: store.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset,
            length: blob.len() - offset,
        });
    }
    let manifest = CheckpointManifest {
        format: "f64-le".into(),
        params,
    };
    fs::write(dir.join(BLOB_FILE), &blob)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Overwrites every parameter of `store` from the checkpoint in `dir`.
/// Names and shapes must match exactly.
pub fn load_checkpoint(store: &mut ParamStore, dir: &Path) -> io::Result<()> {
    let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", manifest_path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != "f64-le" {
        return Err(invalid(format!("unknown format {}", manifest.format)));
    }
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", blob_path.display())))?;
    if manifest.params.len() != store.len() {
        return Err(invalid(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    for entry in &manifest.params {
        let id = store
            .find(&entry.name)
            .ok_or_else(|| invalid(format!("unknown parameter {}", entry.name)))?;
        let t = store.get_mut(id);
        if t.shape() != entry.shape.as_slice() || entry.length != t.numel() * 8 {
            return Err(invalid(format!(
                "parameter {}: shape {:?} in checkpoint, {:?} in model",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let bytes = blob
            .get(entry.offset..entry.offset + entry.length)
            .ok_or_else(|| invalid(format!("parameter {} overruns the blob", entry.name)))?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(())
}

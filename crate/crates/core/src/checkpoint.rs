//! Model checkpoints: a JSON manifest (model spec, seed, tensor index)
//! next to a flat little-endian `f64` blob at `<manifest>.bin`.
//!
//! Loading rebuilds the model from its spec and copies every tensor by
//! name, so values round-trip bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};

pub const CHECKPOINT_FORMAT: &str = "attx-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    pub offset: usize,
    pub len: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model_spec: ModelSpec,
    pub data_file: String,
    pub tensors: Vec<TensorEntry>,
}

/// Path of the blob belonging to manifest `path`.
pub fn data_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let blob_path = data_path(path);
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for p in model.store.iter() {
        let len = p.value.data.len();
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape.clone(),
            offset,
            len,
            trainable: p.trainable,
        });
        for v in &p.value.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += len;
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        seed: model.store.seed(),
        model_spec: model.spec().clone(),
        data_file: blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
    };
    write_atomic(&blob_path, &blob)?;
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_atomic(path, json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if m.format != CHECKPOINT_FORMAT || m.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint {} v{}", m.format, m.version),
        ));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let blob_path = dir.join(&m.data_file);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(&blob_path, "length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut model = Model::new(&m.model_spec, m.seed)?;
    if model.store.len() != m.tensors.len() {
        return Err(Error::format(
            path,
            format!("{} tensors stored, model has {}", m.tensors.len(), model.store.len()),
        ));
    }
    for e in &m.tensors {
        let id = model
            .store
            .find(&e.name)
            .ok_or_else(|| Error::format(path, format!("unknown tensor `{}`", e.name)))?;
        let p = model.store.get_mut(id);
        if p.value.shape != e.shape || e.len != p.value.data.len() {
            return Err(Error::format(
                path,
                format!("tensor `{}` has shape {:?}, model expects {:?}", e.name, e.shape, p.value.shape),
            ));
        }
        let src = values
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| Error::format(&blob_path, format!("tensor `{}` runs past the end", e.name)))?;
        p.value.data.copy_from_slice(src);
    }
    Ok(model)
}

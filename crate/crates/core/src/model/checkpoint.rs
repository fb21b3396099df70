//! Checkpoint directories: `config.json` (architecture), `index.json`
//! (name, shape and element offset of every array) and `parameters.f32`
//! (all arrays as little-endian `float32`, concatenated in index order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AINetConfig, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const PARAMS_FILE: &str = "parameters.f32";

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    architecture: AINetConfig,
    feature_lr_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    dtype: String,
    byte_order: String,
    file: String,
    tensors: Vec<IndexEntry>,
}

fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::json("checkpoint", e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `model` into `dir`, creating it if needed. Values are stored as
/// `float32`, so `f32` models round-trip bit-exactly.
pub fn save_checkpoint<T: Real>(model: &ModelState<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = CheckpointConfig {
        architecture: model.config.clone(),
        feature_lr_scale: model.feature_lr_scale,
    };
    let mut tensors = Vec::with_capacity(model.infos.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (info, value) in model.infos.iter().zip(&model.values) {
        tensors.push(IndexEntry {
            name: info.name.clone(),
            shape: info.shape.clone(),
            offset,
        });
        offset += value.len();
        for v in value.data() {
            bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let index = Index {
        dtype: "float32".into(),
        byte_order: "little".into(),
        file: PARAMS_FILE.into(),
        tensors,
    };
    write(&dir.join("config.json"), to_json(&config)?)?;
    write(&dir.join("index.json"), to_json(&index)?)?;
    write(&dir.join(PARAMS_FILE), bytes)
}

pub fn load_checkpoint<T: Real>(dir: impl AsRef<Path>) -> Result<ModelState<T>> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    };
    let config: CheckpointConfig =
        serde_json::from_str(&read("config.json")?).map_err(|e| Error::json("checkpoint config.json", e))?;
    let index: Index =
        serde_json::from_str(&read("index.json")?).map_err(|e| Error::json("checkpoint index.json", e))?;
    if index.dtype != "float32" || index.byte_order != "little" {
        return Err(Error::Checkpoint(format!(
            "unsupported storage {} / {}",
            index.dtype, index.byte_order
        )));
    }
    let blob_path = dir.join(&index.file);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!(
            "{} is not a float32 array",
            blob_path.display()
        )));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let (_, infos) = super::network::plan(&config.architecture)?;
    if infos.len() != index.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "architecture has {} arrays, index lists {}",
            infos.len(),
            index.tensors.len()
        )));
    }
    let mut values = Vec::with_capacity(infos.len());
    for (info, entry) in infos.iter().zip(&index.tensors) {
        if info.name != entry.name || info.shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "index entry {} {:?} does not match architecture array {} {:?}",
                entry.name, entry.shape, info.name, info.shape
            )));
        }
        let end = entry.offset + info.numel();
        let slice = floats
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("{} runs past the end of {}", entry.name, index.file)))?;
        let data = slice.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
        values.push(Tensor::from_vec(&info.shape, data)?);
    }
    ModelState::from_parts(config.architecture, values, config.feature_lr_scale)
}

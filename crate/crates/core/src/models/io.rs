//! Model persistence: `config.json`, `params.bin` (little-endian `f64`)
//! and `manifest.json` listing each array's name, shape and byte offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the parameter file.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub total_bytes: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Parameter bytes and manifest of `model`.
pub fn encode_params(model: &Model) -> (Vec<u8>, Manifest) {
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for e in model.store.entries() {
        entries.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            offset: bytes.len(),
            trainable: e.trainable,
        });
        for v in e.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: 1,
        total_bytes: bytes.len(),
        entries,
    };
    (bytes, manifest)
}

/// Rebuilds a model from its configuration and stored arrays. Every
/// parameter of the configured model must be present with its shape.
pub fn decode_params(config: ModelConfig, bytes: &[u8], manifest: &Manifest) -> Result<Model> {
    if manifest.total_bytes != bytes.len() {
        return Err(Error::Format(format!(
            "manifest describes {} bytes, file has {}",
            manifest.total_bytes,
            bytes.len()
        )));
    }
    let mut model = Model::new(config, 0)?;
    if manifest.entries.len() != model.store.len() {
        return Err(Error::Format(format!(
            "manifest lists {} arrays, model has {}",
            manifest.entries.len(),
            model.store.len()
        )));
    }
    for (entry, stored) in model.store.entries_mut().iter_mut().zip(&manifest.entries) {
        if entry.name != stored.name || entry.value.shape() != stored.shape.as_slice() {
            return Err(Error::Format(format!(
                "array {} {:?} does not match manifest entry {} {:?}",
                entry.name,
                entry.value.shape(),
                stored.name,
                stored.shape
            )));
        }
        let n = entry.value.len();
        let end = stored.offset + 8 * n;
        let raw = bytes
            .get(stored.offset..end)
            .ok_or_else(|| Error::Format(format!("array {} runs past the end of the file", stored.name)))?;
        for (v, chunk) in entry.value.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(model)
}

pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (bytes, manifest) = encode_params(model);
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(model.config())?)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let config: ModelConfig = serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    decode_params(config, &bytes, &manifest)
}

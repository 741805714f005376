//! Single-file parameter archive.
//!
//! Layout: the 8-byte magic `SKELFUS1`, a little-endian `u64` manifest length,
//! the JSON manifest, then every tensor as little-endian `f32` in row-major
//! order. The manifest echoes the model configuration and lists each tensor's
//! name, shape and offset (in floats) into the data section.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::ModelConfig;
use crate::params::Params;

pub const MAGIC: &[u8; 8] = b"SKELFUS1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata such as the dataset and training configuration.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: Params,
}

impl Checkpoint {
    pub fn from_model(model: &Model, extra: serde_json::Value) -> Self {
        let mut offset = 0;
        let tensors = model
            .params
            .iter()
            .map(|(name, t)| {
                let entry = TensorEntry {
                    name: name.to_string(),
                    shape: [t.nrows(), t.ncols()],
                    offset,
                };
                offset += t.len();
                entry
            })
            .collect();
        Checkpoint {
            manifest: Manifest {
                model: model.config.clone(),
                tensors,
                extra,
            },
            params: model.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * self.params.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, t) in self.params.iter() {
            for &v in t.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let data = &bytes[16 + len..];
        if data.len() % 4 != 0 {
            return Err(bad("data section is not a whole number of f32 values"));
        }
        let floats: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let mut params = Params::new();
        for entry in &manifest.tensors {
            let [rows, cols] = entry.shape;
            let values = floats
                .get(entry.offset..entry.offset + rows * cols)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} lies outside the data section", entry.name)))?;
            let array = Array2::from_shape_vec((rows, cols), values.iter().map(|&v| f64::from(v)).collect())
                .expect("length checked above");
            if params.id(&entry.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", entry.name)));
            }
            params.insert(entry.name.clone(), array);
        }
        Ok(Checkpoint { manifest, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model, checking every tensor's name and shape.
    pub fn into_model(self) -> Result<Model> {
        Model::with_params(self.manifest.model, &self.params)
    }
}

/// Fails with [`Error::CheckpointMismatch`] when a model cannot consume a
/// dataset's samples.
pub fn check_compatible(model: &ModelConfig, dataset: &DatasetConfig) -> Result<()> {
    let pairs = [
        ("joints", model.joints, dataset.joints),
        ("classes", model.classes, dataset.classes),
        ("categories", model.categories, dataset.categories),
    ];
    for (what, m, d) in pairs {
        if m != d {
            return Err(Error::CheckpointMismatch(format!("{what}: checkpoint has {m}, dataset has {d}")));
        }
    }
    if dataset.k > model.max_frames {
        return Err(Error::CheckpointMismatch(format!(
            "k: checkpoint supports {} frames, dataset samples {}",
            model.max_frames, dataset.k
        )));
    }
    Ok(())
}

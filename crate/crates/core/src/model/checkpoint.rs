//! Checkpoint directory: `manifest.json` plus `params.bin`.
//!
//! `params.bin` is every tensor listed in the manifest, in listed order,
//! concatenated as little-endian f64. Biases are stored as `1 × n`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelDims;
use crate::data::io_util::{f64s_to_le, le_to_f64s, parse_json, read_file, write_file};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "mla-ckpt/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Alternating unimodal training with a shared head.
    Mla,
    Concat,
    Late,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Mla => "mla",
            ModelKind::Concat => "concat",
            ModelKind::Late => "late",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: String,
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub tensors: Vec<TensorShape>,
    /// Training steps completed when the checkpoint was taken.
    pub step: usize,
    /// Late fusion only: which modality pathways received training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub step: usize,
    pub trained: Option<Vec<bool>>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Removes and returns the tensor called `name`, checking its shape.
    pub fn take(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Schema(format!("checkpoint lacks tensor {name:?}")))?;
        let t = self.tensors.remove(pos);
        if (t.rows, t.cols) != (rows, cols) {
            return Err(Error::Schema(format!(
                "tensor {name:?} is {}x{}, expected {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        Ok(t.data)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION.to_string(),
        kind: ckpt.kind,
        dims: ckpt.dims.clone(),
        tensors: ckpt
            .tensors
            .iter()
            .map(|t| TensorShape {
                name: t.name.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
        step: ckpt.step,
        trained: ckpt.trained.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    let mut bytes = Vec::new();
    for t in &ckpt.tensors {
        if t.data.len() != t.rows * t.cols {
            return Err(Error::Contract(format!(
                "tensor {:?} holds {} values for {}x{}",
                t.name,
                t.data.len(),
                t.rows,
                t.cols
            )));
        }
        bytes.extend(f64s_to_le(&t.data));
    }
    write_file(&dir.join("manifest.json"), json.as_bytes())?;
    write_file(&dir.join("params.bin"), &bytes)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: CheckpointManifest =
        parse_json(&read_file(&dir.join("manifest.json"))?, "manifest.json")?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint version {:?}, expected {CHECKPOINT_VERSION:?}",
            manifest.version
        )));
    }
    manifest.dims.validate().map_err(|e| Error::Schema(e.to_string()))?;
    let total: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
    let values = le_to_f64s(&read_file(&dir.join("params.bin"))?, total, "params.bin")?;
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse {
            file: "params.bin".into(),
            offset: (pos * 8) as u64,
            msg: "non-finite parameter".into(),
        });
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut offset = 0;
    for shape in manifest.tensors {
        let len = shape.rows * shape.cols;
        tensors.push(NamedTensor {
            name: shape.name,
            rows: shape.rows,
            cols: shape.cols,
            data: values[offset..offset + len].to_vec(),
        });
        offset += len;
    }
    Ok(Checkpoint {
        kind: manifest.kind,
        dims: manifest.dims,
        step: manifest.step,
        trained: manifest.trained,
        tensors,
    })
}

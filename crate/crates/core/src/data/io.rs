//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.json   version, M, N, C, modality_dims, presence encoding
//! <dir>/modality_<m>.bin  N × d_m little-endian f64, row-major
//! <dir>/labels.bin        N little-endian u32
//! <dir>/presence.bin      N × M bytes, 0 or 1, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MultimodalDataset;
use crate::error::{Error, Result};
use crate::numkernel::Mat;

pub const DATASET_VERSION: &str = "mla-dataset/1";
const PRESENCE_ENCODING: &str = "u8-row-major-NxM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    #[serde(rename = "M")]
    pub modalities: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(rename = "C")]
    pub classes: usize,
    pub modality_dims: Vec<usize>,
    pub presence_encoding: String,
}

fn modality_file(m: usize) -> String {
    format!("modality_{m}.bin")
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn f64s_to_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Decodes exactly `count` little-endian f64 values, rejecting short or long input.
pub(crate) fn le_to_f64s(bytes: &[u8], count: usize, file: &str) -> Result<Vec<f64>> {
    expect_len(bytes, count * 8, file)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub(crate) fn expect_len(bytes: &[u8], expected: usize, file: &str) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Parse {
            file: file.to_string(),
            offset: bytes.len() as u64,
            msg: format!("truncated: expected {expected} bytes, found {}", bytes.len()),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Parse {
            file: file.to_string(),
            offset: expected as u64,
            msg: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    Ok(())
}

/// Parses JSON, translating serde's line/column into a byte offset.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8], file: &str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        file: file.to_string(),
        offset: line_col_to_offset(bytes, e.line(), e.column()),
        msg: e.to_string(),
    })
}

fn line_col_to_offset(bytes: &[u8], line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len() + 1;
    }
    bytes.len() as u64
}

pub fn save_dataset(ds: &MultimodalDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        version: DATASET_VERSION.to_string(),
        modalities: ds.modality_count(),
        samples: ds.len(),
        classes: ds.class_count(),
        modality_dims: ds.modality_dims().to_vec(),
        presence_encoding: PRESENCE_ENCODING.to_string(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join("manifest.json"), json.as_bytes())?;
    for (m, table) in ds.tables().iter().enumerate() {
        write_file(&dir.join(modality_file(m)), &f64s_to_le(table.data()))?;
    }
    let labels: Vec<u8> = ds.labels().iter().flat_map(|y| y.to_le_bytes()).collect();
    write_file(&dir.join("labels.bin"), &labels)?;
    let presence: Vec<u8> = ds.presence().iter().map(|&p| p as u8).collect();
    write_file(&dir.join("presence.bin"), &presence)
}

/// Reads a dataset directory. Nothing is returned unless every file decodes and
/// the result passes validation.
pub fn load_dataset(dir: &Path) -> Result<MultimodalDataset> {
    let manifest: DatasetManifest =
        parse_json(&read_file(&dir.join("manifest.json"))?, "manifest.json")?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Schema(format!(
            "unsupported dataset version {:?}, expected {DATASET_VERSION:?}",
            manifest.version
        )));
    }
    if manifest.presence_encoding != PRESENCE_ENCODING {
        return Err(Error::Schema(format!(
            "unsupported presence encoding {:?}",
            manifest.presence_encoding
        )));
    }
    if manifest.modality_dims.len() != manifest.modalities {
        return Err(Error::Schema(format!(
            "manifest declares M = {} but lists {} modality dims",
            manifest.modalities,
            manifest.modality_dims.len()
        )));
    }
    let n = manifest.samples;
    let mut tables = Vec::with_capacity(manifest.modalities);
    for (m, &d) in manifest.modality_dims.iter().enumerate() {
        let name = modality_file(m);
        let values = le_to_f64s(&read_file(&dir.join(&name))?, n * d, &name)?;
        tables.push(Mat::from_vec(n, d, values)?);
    }

    let bytes = read_file(&dir.join("labels.bin"))?;
    expect_len(&bytes, n * 4, "labels.bin")?;
    let labels: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    if let Some((i, y)) = labels
        .iter()
        .enumerate()
        .find(|(_, &y)| y as usize >= manifest.classes)
    {
        return Err(Error::Schema(format!(
            "labels.bin: label {y} at sample {i} is not below C = {}",
            manifest.classes
        )));
    }

    let bytes = read_file(&dir.join("presence.bin"))?;
    expect_len(&bytes, n * manifest.modalities, "presence.bin")?;
    let mut presence = Vec::with_capacity(bytes.len());
    for (offset, &b) in bytes.iter().enumerate() {
        match b {
            0 => presence.push(false),
            1 => presence.push(true),
            other => {
                return Err(Error::Parse {
                    file: "presence.bin".into(),
                    offset: offset as u64,
                    msg: format!("presence byte must be 0 or 1, found {other}"),
                })
            }
        }
    }
    MultimodalDataset::new(tables, labels, presence, manifest.classes)
}

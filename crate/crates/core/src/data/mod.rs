//! Multimodal datasets: the in-memory table, synthetic generation, masking,
//! splitting, minibatching and on-disk format.

mod io;
mod mask;
mod synthetic;

pub(crate) mod io_util {
    pub(crate) use super::io::{f64s_to_le, le_to_f64s, parse_json, read_file, write_file};
}

pub use io::{load_dataset, save_dataset, DatasetManifest, DATASET_VERSION};
pub use mask::{apply_missing_mask, MaskPhase};
pub use synthetic::{generate_synthetic, ModalitySpec, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numkernel::{streams, Mat, Rng};

/// Per-modality feature tables over a shared set of labelled samples.
///
/// `presence` is row-major `N × M`: `presence[i * M + m]` says whether sample
/// `i` carries modality `m`. Feature rows of absent cells are kept (their
/// values are whatever the source produced) but must never be read by
/// training or inference.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    modality_dims: Vec<usize>,
    tables: Vec<Mat>,
    labels: Vec<u32>,
    presence: Vec<bool>,
    class_count: usize,
}

impl MultimodalDataset {
    /// Builds and validates a dataset.
    pub fn new(
        tables: Vec<Mat>,
        labels: Vec<u32>,
        presence: Vec<bool>,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Self {
            modality_dims: tables.iter().map(Mat::cols).collect(),
            tables,
            labels,
            presence,
            class_count,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Same as [`MultimodalDataset::new`] with every cell present.
    pub fn fully_present(tables: Vec<Mat>, labels: Vec<u32>, class_count: usize) -> Result<Self> {
        let presence = vec![true; labels.len() * tables.len()];
        Self::new(tables, labels, presence, class_count)
    }

    /// Checks every structural invariant, returning a schema error on the
    /// first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        let m = self.tables.len();
        if m == 0 {
            return Err(Error::Schema("dataset has no modalities".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Schema(format!(
                "class count {} is below 2",
                self.class_count
            )));
        }
        if self.modality_dims.len() != m {
            return Err(Error::Schema("modality_dims length differs from table count".into()));
        }
        for (k, t) in self.tables.iter().enumerate() {
            if t.rows() != n {
                return Err(Error::Schema(format!(
                    "modality {k} has {} rows, expected {n}",
                    t.rows()
                )));
            }
            if t.cols() != self.modality_dims[k] || t.cols() == 0 {
                return Err(Error::Schema(format!(
                    "modality {k} has width {}, declared {}",
                    t.cols(),
                    self.modality_dims[k]
                )));
            }
            if !t.is_finite() {
                return Err(Error::Schema(format!("modality {k} has non-finite features")));
            }
        }
        if let Some((i, y)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y as usize >= self.class_count)
        {
            return Err(Error::Schema(format!(
                "label {y} at sample {i} is outside [0, {})",
                self.class_count
            )));
        }
        if self.presence.len() != n * m {
            return Err(Error::Schema(format!(
                "presence mask has {} cells, expected {}",
                self.presence.len(),
                n * m
            )));
        }
        for i in 0..n {
            if !self.presence[i * m..(i + 1) * m].iter().any(|&p| p) {
                return Err(Error::Schema(format!("sample {i} has no present modality")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn modality_count(&self) -> usize {
        self.tables.len()
    }

    pub fn modality_dims(&self) -> &[usize] {
        &self.modality_dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn table(&self, m: usize) -> &Mat {
        &self.tables[m]
    }

    pub fn tables(&self) -> &[Mat] {
        &self.tables
    }

    pub fn presence(&self) -> &[bool] {
        &self.presence
    }

    #[inline]
    pub fn is_present(&self, sample: usize, m: usize) -> bool {
        self.presence[sample * self.tables.len() + m]
    }

    pub fn presence_row(&self, sample: usize) -> &[bool] {
        let m = self.tables.len();
        &self.presence[sample * m..(sample + 1) * m]
    }

    /// Samples carrying modality `m`, in ascending order.
    pub fn present_indices(&self, m: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_present(i, m)).collect()
    }

    /// Samples carrying every modality, in ascending order.
    pub fn fully_present_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.presence_row(i).iter().all(|&p| p))
            .collect()
    }

    /// Features of modality `m` and labels for the given samples.
    pub fn gather(&self, m: usize, indices: &[usize]) -> (Mat, Vec<u32>) {
        let x = self.tables[m].select_rows(indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// New dataset holding the listed samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> MultimodalDataset {
        let m = self.tables.len();
        let mut presence = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            presence.extend_from_slice(self.presence_row(i));
        }
        MultimodalDataset {
            modality_dims: self.modality_dims.clone(),
            tables: self.tables.iter().map(|t| t.select_rows(indices)).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            presence,
            class_count: self.class_count,
        }
    }

    /// Copy of the dataset with a replacement presence mask.
    pub fn with_presence(&self, presence: Vec<bool>) -> Result<MultimodalDataset> {
        let ds = MultimodalDataset {
            presence,
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Copy of the dataset with modality `m`'s table replaced.
    pub fn with_table(&self, m: usize, table: Mat) -> Result<MultimodalDataset> {
        ensure!(m < self.tables.len(), "modality {m} out of range");
        let mut ds = self.clone();
        ds.modality_dims[m] = table.cols();
        ds.tables[m] = table;
        ds.validate()?;
        Ok(ds)
    }

    /// Keeps only the listed modalities, dropping samples left with none.
    pub fn select_modalities(&self, keep: &[usize]) -> Result<MultimodalDataset> {
        ensure!(!keep.is_empty(), "must keep at least one modality");
        ensure!(
            keep.iter().all(|&m| m < self.tables.len()),
            "modality index out of range"
        );
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| keep.iter().any(|&m| self.is_present(i, m)))
            .collect();
        let mut presence = Vec::with_capacity(rows.len() * keep.len());
        for &i in &rows {
            presence.extend(keep.iter().map(|&m| self.is_present(i, m)));
        }
        MultimodalDataset::new(
            keep.iter().map(|&m| self.tables[m].select_rows(&rows)).collect(),
            rows.iter().map(|&i| self.labels[i]).collect(),
            presence,
            self.class_count,
        )
    }
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        ensure!(
            f.iter().all(|&v| v > 0.0 && v.is_finite()),
            "split fractions must be positive, got {f:?}"
        );
        ensure!(
            (f.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "split fractions must sum to 1, got {f:?}"
        );
        Ok(())
    }

    /// Sizes of the three parts for `n` samples; test takes the remainder.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let train = (self.train_fraction * n as f64).round() as usize;
        let val = (self.val_fraction * n as f64).round() as usize;
        ensure!(
            train + val < n && train > 0 && val > 0,
            "split of {n} samples by {:?} leaves a part empty",
            (self.train_fraction, self.val_fraction, self.test_fraction)
        );
        Ok((train, val, n - train - val))
    }
}

/// Seeded permutation followed by a contiguous cut into train/val/test.
pub fn split(
    ds: &MultimodalDataset,
    spec: &SplitSpec,
) -> Result<(MultimodalDataset, MultimodalDataset, MultimodalDataset)> {
    let n = ds.len();
    ensure!(n >= 3, "need at least 3 samples to split, got {n}");
    let (train, val, _) = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::stream(spec.seed, streams::SPLIT).shuffle(&mut order);
    Ok((
        ds.subset(&order[..train]),
        ds.subset(&order[train..train + val]),
        ds.subset(&order[train + val..]),
    ))
}

/// Shuffled index batches over the samples carrying modality `m`.
///
/// The shuffle for a given `(seed, epoch)` pair is fixed; the last batch may be
/// short. An empty result means the modality is absent from every sample.
pub fn minibatches(
    ds: &MultimodalDataset,
    m: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    ensure!(batch_size >= 1, "batch size must be at least 1");
    ensure!(m < ds.modality_count(), "modality {m} out of range");
    let mut idx = ds.present_indices(m);
    Rng::stream(seed, streams::BATCH.wrapping_add(epoch)).shuffle(&mut idx);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

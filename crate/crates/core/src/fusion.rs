//! Test-time fusion of per-modality predictions weighted by their confidence.
//!
//! For a sample, each present modality yields logits `f_m(x_m)`, probabilities
//! `p_m = softmax(f_m)` and entropy `e_m = −p_mᵀ ln p_m`. Weights are
//! `λ_m = exp(max_e − e_m) / Σ_v exp(max_e − e_v)` over present modalities and
//! the fused logits are `Σ_m λ_m f_m`.

use serde::{Deserialize, Serialize};

use crate::data::MultimodalDataset;
use crate::error::{ensure, Result};
use crate::model::{encode, head_logits, ModelParams};
use crate::numkernel::{argmax, softmax, Mat};

/// Natural-log entropy with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    ensure!(!p.is_empty(), "entropy of an empty vector");
    ensure!(
        p.iter().all(|&v| v >= 0.0 && v.is_finite()),
        "probabilities must be finite and non-negative"
    );
    let total: f64 = p.iter().sum();
    ensure!(
        (total - 1.0).abs() <= 1e-9,
        "probabilities sum to {total}, not 1"
    );
    Ok(p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum::<f64>()
        .max(0.0))
}

/// Softmax of negative entropies, shifted by the largest entropy.
pub fn fusion_weights(entropies: &[f64]) -> Result<Vec<f64>> {
    ensure!(!entropies.is_empty(), "fusion needs at least one modality");
    ensure!(
        entropies.iter().all(|&e| e.is_finite() && e >= 0.0),
        "entropies must be finite and non-negative"
    );
    let max = entropies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = entropies.iter().map(|&e| (max - e).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// How per-modality logits are weighted at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Entropy-based weights.
    #[default]
    Dynamic,
    /// Equal weights over the present modalities.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityPrediction {
    pub modality: usize,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub entropy: f64,
}

impl ModalityPrediction {
    pub fn from_logits(modality: usize, logits: Vec<f64>) -> Result<Self> {
        let probs = softmax(&logits)?;
        let entropy = entropy(&probs)?;
        Ok(Self {
            modality,
            logits,
            probs,
            entropy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub predictions: Vec<ModalityPrediction>,
    pub weights: Vec<f64>,
    pub fused_logits: Vec<f64>,
    pub class: usize,
}

/// Weighted sum of logits; ties in the argmax go to the lowest class.
pub fn fuse(predictions: Vec<ModalityPrediction>, weights: Vec<f64>) -> Result<FusionResult> {
    ensure!(!predictions.is_empty(), "nothing to fuse");
    ensure!(
        predictions.len() == weights.len(),
        "{} predictions but {} weights",
        predictions.len(),
        weights.len()
    );
    let c = predictions[0].logits.len();
    ensure!(
        predictions.iter().all(|p| p.logits.len() == c),
        "predictions disagree on class count"
    );
    let total: f64 = weights.iter().sum();
    ensure!((total - 1.0).abs() <= 1e-9, "weights sum to {total}, not 1");
    let mut fused = vec![0.0; c];
    for (p, &w) in predictions.iter().zip(&weights) {
        for (f, l) in fused.iter_mut().zip(&p.logits) {
            *f += w * l;
        }
    }
    Ok(FusionResult {
        class: argmax(&fused),
        predictions,
        weights,
        fused_logits: fused,
    })
}

/// Fuses per-modality predictions under `mode`.
pub fn fuse_with(predictions: Vec<ModalityPrediction>, mode: FusionMode) -> Result<FusionResult> {
    let weights = match mode {
        FusionMode::Dynamic => {
            fusion_weights(&predictions.iter().map(|p| p.entropy).collect::<Vec<_>>())?
        }
        FusionMode::Uniform => {
            ensure!(!predictions.is_empty(), "nothing to fuse");
            vec![1.0 / predictions.len() as f64; predictions.len()]
        }
    };
    fuse(predictions, weights)
}

/// Prediction for one sample given per-modality features; `None` marks an
/// absent modality.
pub fn predict(params: &ModelParams, sample: &[Option<&[f64]>]) -> Result<FusionResult> {
    predict_with(params, sample, FusionMode::Dynamic)
}

pub fn predict_with(
    params: &ModelParams,
    sample: &[Option<&[f64]>],
    mode: FusionMode,
) -> Result<FusionResult> {
    ensure!(
        sample.len() == params.encoders.len(),
        "sample has {} modality slots, model has {}",
        sample.len(),
        params.encoders.len()
    );
    let mut preds = Vec::new();
    for (m, x) in sample.iter().enumerate() {
        if let Some(x) = x {
            let h = encode(params, m, &Mat::from_rows(&[x]))?;
            let logits = head_logits(&params.head, &h)?;
            preds.push(ModalityPrediction::from_logits(m, logits.row(0).to_vec())?);
        }
    }
    ensure!(!preds.is_empty(), "every modality is absent");
    fuse_with(preds, mode)
}

/// Logits of modality `m` for every sample carrying it; rows absent in `m`
/// are `None`.
pub fn modality_logits(
    params: &ModelParams,
    m: usize,
    ds: &MultimodalDataset,
) -> Result<Vec<Option<Vec<f64>>>> {
    let idx = ds.present_indices(m);
    let mut out = vec![None; ds.len()];
    if idx.is_empty() {
        return Ok(out);
    }
    let logits = head_logits(&params.head, &encode(params, m, &ds.table(m).select_rows(&idx))?)?;
    for (r, &i) in idx.iter().enumerate() {
        out[i] = Some(logits.row(r).to_vec());
    }
    Ok(out)
}

/// Fuses precomputed per-modality logit columns sample by sample.
pub fn fuse_dataset(
    per_modality: &[Vec<Option<Vec<f64>>>],
    mode: FusionMode,
) -> Result<Vec<FusionResult>> {
    let n = per_modality.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let preds = per_modality
                .iter()
                .enumerate()
                .filter_map(|(m, col)| col[i].clone().map(|l| (m, l)))
                .map(|(m, l)| ModalityPrediction::from_logits(m, l))
                .collect::<Result<Vec<_>>>()?;
            ensure!(!preds.is_empty(), "sample {i} has no modality");
            fuse_with(preds, mode)
        })
        .collect()
}

/// Batched [`predict_with`] over a dataset, honouring its presence mask.
pub fn predict_dataset(
    params: &ModelParams,
    ds: &MultimodalDataset,
    mode: FusionMode,
) -> Result<Vec<FusionResult>> {
    let cols = (0..ds.modality_count())
        .map(|m| modality_logits(params, m, ds))
        .collect::<Result<Vec<_>>>()?;
    fuse_dataset(&cols, mode)
}

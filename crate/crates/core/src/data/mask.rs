use super::MultimodalDataset;
use crate::error::{ensure, Result};
use crate::numkernel::{streams, Rng};

/// Which partition a mask is drawn for. Each phase reads its own RNG stream so
/// train, validation and test masks are independent draws at the same rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPhase {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// Per-cell drop probability that, after rejecting all-absent rows, leaves each
/// modality absent with marginal probability `eta`.
///
/// Rejection conditions the cells: with independent drops at rate `x`, the
/// surviving marginal is `(x − x^M) / (1 − x^M)`, which is increasing in `x`
/// and tends to `(M − 1) / M`. Returns `None` when `eta` is at or past that
/// limit; such rates are served by keeping exactly one modality per row.
pub(crate) fn calibrated_drop_rate(eta: f64, modalities: usize) -> Option<f64> {
    if eta == 0.0 {
        return Some(0.0);
    }
    let m = modalities as i32;
    let ceiling = (modalities as f64 - 1.0) / modalities as f64;
    if eta >= ceiling - 1e-12 {
        return None;
    }
    let marginal = |x: f64| (x - x.powi(m)) / (1.0 - x.powi(m));
    let (mut lo, mut hi) = (eta, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if marginal(mid) < eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Masks each (sample, modality) cell with probability `eta`, never leaving a
/// sample without a modality.
///
/// Rows are drawn cell by cell and redrawn while empty. The per-cell rate is
/// calibrated (see [`calibrated_drop_rate`]) so the fraction of absent cells
/// per modality is `eta` in expectation. Cells already absent in `ds` stay
/// absent. Deterministic in `(ds, eta, seed, phase)`.
pub fn apply_missing_mask(
    ds: &MultimodalDataset,
    eta: f64,
    seed: u64,
    phase: MaskPhase,
) -> Result<MultimodalDataset> {
    ensure!(
        (0.0..1.0).contains(&eta),
        "missing rate must lie in [0, 1), got {eta}"
    );
    if eta == 0.0 {
        return Ok(ds.clone());
    }
    let m = ds.modality_count();
    let drop_rate = calibrated_drop_rate(eta, m);
    let mut rng = Rng::stream(seed, streams::MASK + phase as u64);
    let mut presence = Vec::with_capacity(ds.len() * m);
    let mut row = vec![false; m];
    for i in 0..ds.len() {
        let available = ds.presence_row(i);
        let candidates: Vec<usize> = (0..m).filter(|&k| available[k]).collect();
        match drop_rate {
            Some(x) => loop {
                for (k, cell) in row.iter_mut().enumerate() {
                    *cell = !rng.bernoulli(x) && available[k];
                }
                if row.iter().any(|&p| p) {
                    break;
                }
            },
            None => {
                row.fill(false);
                row[candidates[rng.below(candidates.len())]] = true;
            }
        }
        presence.extend_from_slice(&row);
    }
    ds.with_presence(presence)
}

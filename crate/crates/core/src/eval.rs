//! Accuracy reports, the HGM × DF ablation grid, missing-rate sweeps and the
//! modality-gap diagnostic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::altopt::{train, TrainConfig};
use crate::baselines::{train_late_fusion, unimodal_probe, TrainedModel};
use crate::data::{apply_missing_mask, MaskPhase, MultimodalDataset};
use crate::error::{ensure, Result};
use crate::fusion::FusionMode;
use crate::numkernel::norm;

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[u32]) -> Result<f64> {
    ensure!(!labels.is_empty(), "accuracy over no samples");
    ensure!(
        predictions.len() == labels.len(),
        "{} predictions for {} labels",
        predictions.len(),
        labels.len()
    );
    let hits = predictions.iter().zip(labels).filter(|(&p, &y)| p == y as usize).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracy of each modality alone over the samples carrying it; `None`
    /// when the modality cannot be probed (untrained or absent from the set).
    pub probes: Vec<Option<f64>>,
    /// Accuracy using every present modality.
    pub multi: f64,
    /// `confusion[true][predicted]` for the multi prediction.
    pub confusion: Vec<Vec<u64>>,
    pub samples: usize,
}

/// Probes every modality and scores the fused prediction.
pub fn evaluate(model: &TrainedModel, ds: &MultimodalDataset, mode: FusionMode) -> Result<EvalReport> {
    ensure!(!ds.is_empty(), "evaluation set is empty");
    let probes = (0..ds.modality_count())
        .map(|m| {
            if model.is_trained(m) && !ds.present_indices(m).is_empty() {
                unimodal_probe(model, m, ds).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = model.predict_classes(ds, mode)?;
    let c = ds.class_count();
    let mut confusion = vec![vec![0u64; c]; c];
    for (&p, &y) in pred.iter().zip(ds.labels()) {
        confusion[y as usize][p] += 1;
    }
    Ok(EvalReport {
        probes,
        multi: accuracy(&pred, ds.labels())?,
        confusion,
        samples: ds.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub hgm: bool,
    pub dynamic_fusion: bool,
    pub report: EvalReport,
}

/// The 2 × 2 grid {HGM on, off} × {dynamic, uniform fusion}. Cells are ordered
/// (on, on), (on, off), (off, on), (off, off).
pub fn ablate(config: &TrainConfig, train_set: &MultimodalDataset, test_set: &MultimodalDataset) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(4);
    for hgm in [true, false] {
        let cfg = TrainConfig {
            hgm_enabled: hgm,
            ..config.clone()
        };
        let model = TrainedModel::Mla(train(&cfg, train_set)?.params);
        for df in [true, false] {
            let mode = if df { FusionMode::Dynamic } else { FusionMode::Uniform };
            cells.push(AblationCell {
                hgm,
                dynamic_fusion: df,
                report: evaluate(&model, test_set, mode)?,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Concurrent runs; `0` or `1` runs them one after another.
    #[serde(default)]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub eta: f64,
    pub seed: u64,
    pub mla: EvalReport,
    pub late: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub runs: Vec<SweepRun>,
    pub mean_mla_multi: f64,
    pub mean_late_multi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    /// Sorted by strictly increasing `eta`.
    pub rows: Vec<SweepRow>,
}

/// One sweep cell: mask both sets at `eta`, train MLA and late fusion with
/// `seed`, evaluate both on the masked test set.
pub fn sweep_run(
    config: &TrainConfig,
    train_set: &MultimodalDataset,
    test_set: &MultimodalDataset,
    eta: f64,
    seed: u64,
) -> Result<SweepRun> {
    let tr = apply_missing_mask(train_set, eta, seed, MaskPhase::Train)?;
    let te = apply_missing_mask(test_set, eta, seed, MaskPhase::Test)?;
    let cfg = TrainConfig {
        seed,
        ..config.clone()
    };
    let mla = TrainedModel::Mla(train(&cfg, &tr)?.params);
    let late = TrainedModel::Late(train_late_fusion(&cfg, &tr)?.0);
    Ok(SweepRun {
        eta,
        seed,
        mla: evaluate(&mla, &te, FusionMode::Dynamic)?,
        late: evaluate(&late, &te, FusionMode::Dynamic)?,
    })
}

/// The (η, seed) cells of a sweep, validated and sorted by η then seed.
pub fn sweep_cells(opts: &SweepOptions) -> Result<Vec<(f64, u64)>> {
    ensure!(!opts.etas.is_empty(), "sweep needs at least one missing rate");
    ensure!(!opts.seeds.is_empty(), "sweep needs at least one seed");
    ensure!(
        opts.etas.iter().all(|e| (0.0..=0.7).contains(e)),
        "missing rates must lie in [0, 0.7]"
    );
    let mut etas = opts.etas.clone();
    etas.sort_by(f64::total_cmp);
    ensure!(etas.windows(2).all(|w| w[0] < w[1]), "missing rates must be distinct");
    let mut seeds = opts.seeds.clone();
    seeds.sort_unstable();
    ensure!(seeds.windows(2).all(|w| w[0] < w[1]), "seeds must be distinct");
    Ok(etas
        .iter()
        .flat_map(|&e| seeds.iter().map(move |&s| (e, s)))
        .collect())
}

/// Groups finished runs by η in ascending order and averages over seeds.
pub fn aggregate_sweep(seeds: &[u64], mut runs: Vec<SweepRun>) -> SweepReport {
    runs.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(a.seed.cmp(&b.seed)));
    let mut rows: Vec<SweepRow> = Vec::new();
    for run in runs {
        match rows.last_mut() {
            Some(row) if row.eta == run.eta => row.runs.push(run),
            _ => rows.push(SweepRow {
                eta: run.eta,
                runs: vec![run],
                mean_mla_multi: 0.0,
                mean_late_multi: 0.0,
            }),
        }
    }
    for row in &mut rows {
        let n = row.runs.len() as f64;
        row.mean_mla_multi = row.runs.iter().map(|r| r.mla.multi).sum::<f64>() / n;
        row.mean_late_multi = row.runs.iter().map(|r| r.late.multi).sum::<f64>() / n;
    }
    SweepReport {
        seeds: seeds.to_vec(),
        rows,
    }
}

/// Every (η, seed) cell of [`sweep_run`], retrained from scratch.
///
/// With `jobs > 1` cells run concurrently on a dedicated pool; the report is
/// identical either way.
pub fn missing_sweep(
    config: &TrainConfig,
    train_set: &MultimodalDataset,
    test_set: &MultimodalDataset,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    let cells = sweep_cells(opts)?;
    let run = |&(eta, seed): &(f64, u64)| sweep_run(config, train_set, test_set, eta, seed);
    let runs = if opts.jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| crate::Error::Config(format!("cannot start {} workers: {e}", opts.jobs)))?
            .install(|| cells.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        cells.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(aggregate_sweep(&opts.seeds, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDistance {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Unit-norm centroid of each modality's unit-normalized embeddings.
    pub centroids: Vec<Vec<f64>>,
    /// Euclidean distance between every pair of centroids, `a < b`.
    pub distances: Vec<GapDistance>,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Distance between normalized per-modality embedding centroids over the
/// fully paired samples of `ds`.
pub fn modality_gap(model: &TrainedModel, ds: &MultimodalDataset) -> Result<GapReport> {
    let idx = ds.fully_present_indices();
    ensure!(!idx.is_empty(), "modality gap needs paired samples");
    let centroids = (0..ds.modality_count())
        .map(|m| {
            let h = model.encoder(m).forward(&ds.gather(m, &idx).0)?;
            let mut c = vec![0.0; h.cols()];
            for i in 0..h.rows() {
                for (acc, v) in c.iter_mut().zip(normalized(h.row(i))) {
                    *acc += v;
                }
            }
            Ok(normalized(&c))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut distances = Vec::new();
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            let d: f64 = centroids[a]
                .iter()
                .zip(&centroids[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            distances.push(GapDistance { a, b, distance: d });
        }
    }
    Ok(GapReport {
        centroids,
        distances,
    })
}

//! Shared oracles and fixtures for the integration and acceptance tests.
//!
//! Everything here is written independently of the library's numerics so it
//! can serve as a reference: dense Gauss-Jordan inversion, central finite
//! differences, and the synthetic benchmark definition.

#![allow(dead_code)]

use mla::altopt::TrainConfig;
use mla::data::{generate_synthetic, split, ModalitySpec, MultimodalDataset, SplitSpec, SyntheticSpec};
use mla::model::{loss_and_grads, ModelParams, ParamTensors};
use mla::numkernel::Mat;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    let pivot_row = aug[col].clone();
                    for (v, pv) in aug[r].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `(I + α⁻¹ Σ h hᵀ)⁻¹` computed directly.
pub fn rls_closed_form(s: usize, alpha: f64, hs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; s]; s];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for h in hs {
        for i in 0..s {
            for j in 0..s {
                a[i][j] += h[i] * h[j] / alpha;
            }
        }
    }
    dense_inverse(&a)
}

pub fn frobenius_diff(p: &Mat, q: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (i, row) in q.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            acc += (p.get(i, j) - v).powi(2);
        }
    }
    acc.sqrt()
}

/// Loss of modality `m`'s pathway on a batch.
pub fn loss_of(params: &ModelParams, m: usize, x: &Mat, y: &[u32]) -> f64 {
    loss_and_grads(params, m, x, y).unwrap().loss
}

/// Central differences of the pathway loss with respect to every parameter,
/// in [`ParamTensors`] order.
pub fn numeric_gradient(params: &ModelParams, m: usize, x: &Mat, y: &[u32], step: f64) -> Vec<f64> {
    let count = params.param_count();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *nth_param(&mut plus, k) += step;
        *nth_param(&mut minus, k) -= step;
        out.push((loss_of(&plus, m, x, y) - loss_of(&minus, m, x, y)) / (2.0 * step));
    }
    out
}

pub fn nth_param(params: &mut ModelParams, mut k: usize) -> &mut f64 {
    for t in params.tensors_mut() {
        if k < t.len() {
            return &mut t[k];
        }
        k -= t.len();
    }
    panic!("parameter index out of range");
}

pub fn flatten(p: &impl ParamTensors) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

pub fn bits(p: &impl ParamTensors) -> Vec<u64> {
    flatten(p).iter().map(|v| v.to_bits()).collect()
}

/// The dominant/subordinate benchmark: latent dimension 8, 4 classes, 6000
/// samples, two 32-dimensional modalities. The dominant one has noise 0.1;
/// the subordinate one has noise 1.0 and half the mixing scale.
pub fn laziness_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        latent_dim: 8,
        class_count: 4,
        samples: 6000,
        modalities: vec![
            ModalitySpec {
                dim: 32,
                mixing_scale: 1.0,
                noise_std: 0.1,
            },
            ModalitySpec {
                dim: 32,
                mixing_scale: 0.5,
                noise_std: 1.0,
            },
        ],
        seed,
    }
}

pub const DOMINANT: usize = 0;
pub const SUBORDINATE: usize = 1;
pub const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

/// Train and test splits of the benchmark for `seed`.
pub fn laziness_splits(seed: u64) -> (MultimodalDataset, MultimodalDataset) {
    let ds = generate_synthetic(&laziness_spec(seed)).unwrap();
    let (train, _, test) = split(
        &ds,
        &SplitSpec {
            seed,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    (train, test)
}

/// Optimizer defaults with `T = 60`.
pub fn laziness_config(seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: 60,
        seed,
        ..TrainConfig::default()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Plain single-modality minibatch SGD with momentum, written out step by
/// step: for every epoch, every batch, `v ← μ v + g; θ ← θ − γ v` over the
/// flattened parameter vector. Returns the final parameters and each epoch's
/// sample-weighted mean loss.
pub fn reference_unimodal_training(config: &TrainConfig, ds: &MultimodalDataset) -> (ModelParams, Vec<f64>) {
    assert_eq!(ds.modality_count(), 1);
    let dims = config.model_dims(ds);
    let mut params = mla::model::init_params(&dims, config.seed).unwrap();
    let mut velocity = vec![0.0; params.param_count()];
    let mut losses = Vec::new();
    for epoch in 0..config.total_steps {
        let lr = config.lr * config.lr_decay.powi(config.decay_steps.iter().filter(|&&s| s <= epoch).count() as i32);
        let batches = mla::data::minibatches(ds, 0, config.batch_size, config.seed, epoch as u64).unwrap();
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in batches {
            let (x, y) = ds.gather(0, &batch);
            let g = loss_and_grads(&params, 0, &x, &y).unwrap();
            total += g.loss * batch.len() as f64;
            seen += batch.len();
            let grad: Vec<f64> = flatten(&g.encoder).into_iter().chain(flatten(&g.head)).collect();
            for (k, gk) in grad.iter().enumerate() {
                velocity[k] = config.momentum * velocity[k] + gk;
                *nth_param(&mut params, k) -= lr * velocity[k];
            }
        }
        losses.push(total / seen as f64);
    }
    (params, losses)
}

/// Small three-class single-modality set.
pub fn unimodal_toy(seed: u64, samples: usize) -> MultimodalDataset {
    generate_synthetic(&SyntheticSpec {
        latent_dim: 3,
        class_count: 3,
        samples,
        modalities: vec![ModalitySpec {
            dim: 5,
            mixing_scale: 1.0,
            noise_std: 0.2,
        }],
        seed,
    })
    .unwrap()
}

use serde::{Deserialize, Serialize};

use super::MultimodalDataset;
use crate::error::{ensure, Result};
use crate::numkernel::{dot, streams, Mat, Rng};

/// One observed view of the latent factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    /// Feature dimension `d_m`.
    pub dim: usize,
    /// Mixing-matrix entries are `N(0, 1) · mixing_scale / √k`.
    pub mixing_scale: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
}

/// Latent-factor multiclass generator.
///
/// Each sample draws `z ~ N(0, I_k)`; its label is the argmax of `V z` for a
/// fixed random `C × k` matrix `V`, and modality `m` observes
/// `x_m = A_m z + σ_m ε`. Raising `σ_m` makes a modality less informative, which
/// is how dominant and subordinate modalities are set up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub class_count: usize,
    pub samples: usize,
    pub modalities: Vec<ModalitySpec>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.latent_dim >= 1, "latent_dim must be at least 1");
        ensure!(self.class_count >= 2, "class_count must be at least 2");
        ensure!(self.samples >= 1, "samples must be at least 1");
        ensure!(!self.modalities.is_empty(), "need at least one modality");
        for (m, spec) in self.modalities.iter().enumerate() {
            ensure!(spec.dim >= 1, "modality {m}: dim must be at least 1");
            ensure!(
                spec.noise_std >= 0.0 && spec.noise_std.is_finite(),
                "modality {m}: noise_std must be finite and non-negative"
            );
            ensure!(
                spec.mixing_scale.is_finite(),
                "modality {m}: mixing_scale must be finite"
            );
        }
        Ok(())
    }
}

/// Class matrix with orthonormal rows when `C ≤ k` (equal class priors under an
/// isotropic latent), unit-norm rows otherwise.
fn class_matrix(spec: &SyntheticSpec) -> Mat {
    let (c, k) = (spec.class_count, spec.latent_dim);
    let mut rng = Rng::stream(spec.seed, streams::DATA_CLASS_MATRIX);
    let mut v = Mat::from_fn(c, k, |_, _| rng.normal());
    let orthogonalize = c <= k;
    for i in 0..c {
        if orthogonalize {
            for j in 0..i {
                let proj = dot(v.row(i), v.row(j));
                let prev = v.row(j).to_vec();
                for (a, b) in v.row_mut(i).iter_mut().zip(&prev) {
                    *a -= proj * b;
                }
            }
        }
        let norm = dot(v.row(i), v.row(i)).sqrt();
        for a in v.row_mut(i) {
            *a /= norm;
        }
    }
    v
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultimodalDataset> {
    spec.validate()?;
    let (n, k) = (spec.samples, spec.latent_dim);

    let mut latent_rng = Rng::stream(spec.seed, streams::DATA_LATENT);
    let latent = Mat::from_fn(n, k, |_, _| latent_rng.normal());

    let v = class_matrix(spec);
    let labels: Vec<u32> = (0..n)
        .map(|i| {
            let z = latent.row(i);
            let scores: Vec<f64> = (0..spec.class_count).map(|c| dot(v.row(c), z)).collect();
            crate::numkernel::argmax(&scores) as u32
        })
        .collect();

    let tables = spec
        .modalities
        .iter()
        .enumerate()
        .map(|(m, ms)| {
            let mut mix_rng = Rng::stream(spec.seed, streams::DATA_MIXING + m as u64);
            let scale = ms.mixing_scale / (k as f64).sqrt();
            let a = Mat::from_fn(ms.dim, k, |_, _| mix_rng.normal() * scale);
            let mut noise_rng = Rng::stream(spec.seed, streams::DATA_NOISE + m as u64);
            let mut x = latent.matmul_t(&a)?;
            for v in x.data_mut() {
                *v += ms.noise_std * noise_rng.normal();
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;

    MultimodalDataset::fully_present(tables, labels, spec.class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::softmax;

    fn spec(n: usize, noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            latent_dim: 8,
            class_count: 4,
            samples: n,
            modalities: vec![
                ModalitySpec {
                    dim: 12,
                    mixing_scale: 1.0,
                    noise_std: noise,
                },
                ModalitySpec {
                    dim: 6,
                    mixing_scale: 2.0,
                    noise_std: noise,
                },
            ],
            seed,
        }
    }

    /// Multinomial logistic regression by full-batch gradient descent.
    fn logistic_probe_accuracy(x: &Mat, y: &[u32], c: usize) -> f64 {
        let (n, d) = (x.rows(), x.cols());
        let mut w = vec![0.0; (d + 1) * c];
        for _ in 0..300 {
            let mut g = vec![0.0; w.len()];
            for i in 0..n {
                let row = x.row(i);
                let logits: Vec<f64> = (0..c)
                    .map(|k| w[d * c + k] + (0..d).map(|j| row[j] * w[j * c + k]).sum::<f64>())
                    .collect();
                let p = softmax(&logits).unwrap();
                for k in 0..c {
                    let r = p[k] - if y[i] as usize == k { 1.0 } else { 0.0 };
                    for j in 0..d {
                        g[j * c + k] += r * row[j] / n as f64;
                    }
                    g[d * c + k] += r / n as f64;
                }
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= 1.0 * gi;
            }
        }
        let correct = (0..n)
            .filter(|&i| {
                let row = x.row(i);
                let logits: Vec<f64> = (0..c)
                    .map(|k| w[d * c + k] + (0..d).map(|j| row[j] * w[j * c + k]).sum::<f64>())
                    .collect();
                crate::numkernel::argmax(&logits) == y[i] as usize
            })
            .count();
        correct as f64 / n as f64
    }

    #[test]
    fn noiseless_modality_is_linearly_separable() {
        let ds = generate_synthetic(&spec(4000, 0.0, 5)).unwrap();
        let acc = logistic_probe_accuracy(ds.table(0), ds.labels(), 4);
        assert!(acc >= 0.90, "probe accuracy {acc}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&spec(300, 0.5, 9)).unwrap();
        let b = generate_synthetic(&spec(300, 0.5, 9)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec(300, 0.5, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn classes_are_roughly_balanced() {
        for seed in 0..5 {
            let ds = generate_synthetic(&spec(1000, 1.0, seed)).unwrap();
            let mut counts = [0usize; 4];
            for &y in ds.labels() {
                counts[y as usize] += 1;
            }
            for c in counts {
                let f = c as f64 / 1000.0;
                assert!((0.15..=0.35).contains(&f), "seed {seed}: {counts:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(10, 0.1, 0);
        s.class_count = 1;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(10, 0.1, 0);
        s.modalities[1].noise_std = -1.0;
        assert!(generate_synthetic(&s).is_err());
        let mut s = spec(10, 0.1, 0);
        s.latent_dim = 0;
        assert!(generate_synthetic(&s).is_err());
    }
}

//! Dense linear algebra and probability primitives.
//!
//! Everything is `f64`, row-major, and summed left to right so that two runs
//! with the same inputs produce identical bits.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        ensure!(
            self.cols == other.rows,
            "matmul shape mismatch: {}x{} · {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Result<Mat> {
        ensure!(
            self.rows == other.rows,
            "t_matmul shape mismatch: ({}x{})ᵀ · {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Mat::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Mat) -> Result<Mat> {
        ensure!(
            self.cols == other.cols,
            "matmul_t shape mismatch: {}x{} · ({}x{})ᵀ",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        ensure!(
            self.rows == other.rows && self.cols == other.cols,
            "sub shape mismatch"
        );
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|a_ij − a_ji|`. Only meaningful for square matrices.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replaces the matrix with `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, avg);
                self.set(j, i, avg);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Left-to-right dot product.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn matvec(a: &Mat, x: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        a.cols() == x.len(),
        "matvec shape mismatch: {}x{} · {}",
        a.rows(),
        a.cols(),
        x.len()
    );
    Ok((0..a.rows()).map(|i| dot(a.row(i), x)).collect())
}

/// `x · yᵀ`.
pub fn outer(x: &[f64], y: &[f64]) -> Mat {
    Mat::from_fn(x.len(), y.len(), |i, j| x[i] * y[j])
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    ensure!(!z.is_empty(), "softmax of an empty vector");
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log softmax(z)`, computed as `z − max − log Σ exp(z − max)`.
pub fn log_softmax(z: &[f64]) -> Result<Vec<f64>> {
    ensure!(!z.is_empty(), "log_softmax of an empty vector");
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(z.iter().map(|&v| v - max - lse).collect())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Whether `a` admits a Cholesky factorization with every pivot above 1e-12.
pub fn cholesky_ok(a: &Mat) -> Result<bool> {
    ensure!(
        a.rows() == a.cols(),
        "cholesky_ok needs a square matrix, got {}x{}",
        a.rows(),
        a.cols()
    );
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if !(diag > 1e-12) {
            return Ok(false);
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / ljj);
        }
    }
    Ok(true)
}

/// Stream identifiers for [`Rng::stream`].
///
/// A run seed fans out into independent ChaCha8 streams, one per purpose, so
/// that adding draws for one purpose never shifts another.
pub mod streams {
    pub const DATA_LATENT: u64 = 0x10;
    pub const DATA_CLASS_MATRIX: u64 = 0x11;
    /// Offset by modality index.
    pub const DATA_MIXING: u64 = 0x100;
    /// Offset by modality index.
    pub const DATA_NOISE: u64 = 0x200;
    /// Offset by a caller-chosen split index (0 train, 1 val, 2 test).
    pub const MASK: u64 = 0x300;
    pub const SPLIT: u64 = 0x400;
    /// Offset by model component (encoder index, or head after the encoders).
    pub const INIT: u64 = 0x1000;
    /// Offset by training step or epoch.
    pub const BATCH: u64 = 1 << 32;
}

/// Seedable counter-based generator (ChaCha8).
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    #[test]
    fn matvec_examples() {
        assert_eq!(
            matvec(&Mat::identity(3), &[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(matvec(&Mat::zeros(2, 2), &[5.0, 7.0]).unwrap(), vec![0.0, 0.0]);
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matvec(&a, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(matvec(&a, &[1.0]).is_err());
    }

    #[test]
    fn outer_examples() {
        assert_eq!(
            outer(&[1.0, 0.0], &[0.0, 1.0]),
            Mat::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]])
        );
        assert_eq!(outer(&[0.0, 0.0], &[4.0, 5.0, 6.0]), Mat::zeros(2, 3));
        assert_eq!(outer(&[2.0], &[3.0]), Mat::from_rows(&[&[6.0]]));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        for c in [-1e3, 0.0, 7.5, 1e3] {
            let p = softmax(&[c, c, c]).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1e308, 0.0, -1e308]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn cholesky_examples() {
        assert!(cholesky_ok(&Mat::identity(4)).unwrap());
        assert!(!cholesky_ok(&Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap());
        assert!(cholesky_ok(&Mat::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]])).unwrap());
        assert!(cholesky_ok(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = Rng::new(3);
        let a = Mat::from_fn(4, 3, |_, _| rng.normal());
        let b = Mat::from_fn(4, 5, |_, _| rng.normal());
        let c = Mat::from_fn(5, 3, |_, _| rng.normal());
        let lhs = a.t_matmul(&b).unwrap();
        let rhs = a.transpose().matmul(&b).unwrap();
        assert!(lhs.sub(&rhs).unwrap().frobenius_norm() < 1e-13);
        let lhs = a.matmul_t(&c).unwrap();
        let rhs = a.matmul(&c.transpose()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().frobenius_norm() < 1e-13);
    }

    #[test]
    fn rng_is_reproducible() {
        let draw = |seed| {
            let mut r = Rng::stream(seed, streams::DATA_LATENT);
            (0..64)
                .flat_map(|_| r.normal().to_le_bytes())
                .collect::<Vec<u8>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
        let mut a = Rng::stream(5, 1);
        let mut b = Rng::stream(5, 2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    fn naive_matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, xj) in x.iter().enumerate() {
                *o += a.data()[i * a.cols() + j] * xj;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let p = softmax(&z).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }

        #[test]
        fn softmax_is_shift_invariant(
            z in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&z).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn matvec_and_outer_match_naive_loops(
            rows in 1usize..8,
            cols in 1usize..8,
            seed in any::<u64>(),
        ) {
            let mut rng = Rng::new(seed);
            let a = Mat::from_fn(rows, cols, |_, _| rng.uniform(-5.0, 5.0));
            let x: Vec<f64> = (0..cols).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let y: Vec<f64> = (0..rows).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let fast = matvec(&a, &x).unwrap();
            for (f, n) in fast.iter().zip(naive_matvec(&a, &x)) {
                prop_assert!((f - n).abs() <= 1e-13);
            }
            let o = outer(&y, &x);
            for i in 0..rows {
                for j in 0..cols {
                    prop_assert!((o.get(i, j) - y[i] * x[j]).abs() <= 1e-13);
                }
            }
        }
    }
}

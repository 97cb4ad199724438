//! Modality encoders, the shared linear head, and their exact gradients.
//!
//! Every dense layer computes `y = x · W + b` with `W` stored `in × out`, so a
//! batch of `B` rows maps to `B × out`. Encoders apply a rectifier after each
//! hidden layer and nothing after the last one, whose width is the shared
//! feature dimension `s`.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, ModelKind, NamedTensor,
    TensorShape, CHECKPOINT_VERSION,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numkernel::{log_softmax, softmax, streams, Mat, Rng};

/// Architecture shared by every model in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Feature width `d_m` of each modality.
    pub input_dims: Vec<usize>,
    /// Hidden widths of each encoder, input side first.
    pub hidden: Vec<usize>,
    /// Encoder output width `s`.
    pub feature_dim: usize,
    pub class_count: usize,
}

impl ModelDims {
    pub fn modality_count(&self) -> usize {
        self.input_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.input_dims.is_empty(), "model needs at least one modality");
        ensure!(
            self.input_dims.iter().all(|&d| d > 0),
            "modality input dims must be positive"
        );
        ensure!(self.hidden.iter().all(|&h| h > 0), "hidden widths must be positive");
        ensure!(self.feature_dim > 0, "feature dim must be positive");
        ensure!(self.class_count >= 2, "need at least two classes");
        Ok(())
    }

    /// `(fan_in, fan_out)` of each encoder layer for modality `m`.
    pub fn encoder_shapes(&self, m: usize) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dims[m]];
        widths.extend(&self.hidden);
        widths.push(self.feature_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Flat views over every parameter array of a model component, in a fixed
/// order. Optimizers and serializers walk these.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// The shared classifier: `s × C` weight plus `C` bias.
pub type HeadParams = Dense;

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Mat::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    /// Fan-based uniform weights in `±√(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Mat::from_fn(fan_in, fan_out, |_, _| rng.uniform(-limit, limit)),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        ensure!(
            x.cols() == self.in_dim(),
            "layer expects {} input columns, got {}",
            self.in_dim(),
            x.cols()
        );
        let mut out = x.matmul(&self.weight)?;
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Gradients of the layer parameters and of its input given `d_out`.
    pub fn backward(&self, input: &Mat, d_out: &Mat) -> Result<(Dense, Mat)> {
        let weight = input.t_matmul(d_out)?;
        let mut bias = vec![0.0; self.out_dim()];
        for i in 0..d_out.rows() {
            for (b, g) in bias.iter_mut().zip(d_out.row(i)) {
                *b += g;
            }
        }
        let d_input = d_out.matmul_t(&self.weight)?;
        Ok((Dense { weight, bias }, d_input))
    }
}

impl ParamTensors for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias]
    }
}

/// One modality's MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backprop. `inputs[l]` is what
/// layer `l` consumed (post-rectifier for `l > 0`).
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    inputs: Vec<Mat>,
}

impl EncoderParams {
    pub fn init(shapes: &[(usize, usize)], rng: &mut Rng) -> Self {
        Self {
            layers: shapes.iter().map(|&(i, o)| Dense::glorot(i, o, rng)).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("encoder has layers").out_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    /// Checks that consecutive layers chain.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.layers.is_empty(), "encoder has no layers");
        for w in self.layers.windows(2) {
            ensure!(
                w[0].out_dim() == w[1].in_dim(),
                "encoder layers do not chain: {} -> {}",
                w[0].out_dim(),
                w[1].in_dim()
            );
        }
        Ok(())
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        Ok(self.forward_trace(x)?.0)
    }

    pub fn forward_trace(&self, x: &Mat) -> Result<(Mat, EncoderTrace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&a)?;
            if l < last {
                for v in z.data_mut() {
                    *v = v.max(0.0);
                }
            }
            inputs.push(a);
            a = z;
        }
        Ok((a, EncoderTrace { inputs }))
    }

    /// Parameter gradients given the gradient of the encoder output.
    pub fn backward(&self, trace: &EncoderTrace, d_out: &Mat) -> Result<EncoderParams> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            let (g, d_input) = self.layers[l].backward(&trace.inputs[l], &delta)?;
            grads.push(g);
            if l > 0 {
                // Rectifier mask: the stored input is relu(z), positive iff z > 0.
                delta = d_input;
                for (d, a) in delta.data_mut().iter_mut().zip(trace.inputs[l].data()) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }
        grads.reverse();
        Ok(EncoderParams { layers: grads })
    }
}

impl ParamTensors for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Modality encoders sharing one linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoders: Vec<EncoderParams>,
    pub head: HeadParams,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        ensure!(
            self.encoders.len() == self.dims.modality_count(),
            "model has {} encoders for {} modalities",
            self.encoders.len(),
            self.dims.modality_count()
        );
        for (m, enc) in self.encoders.iter().enumerate() {
            enc.validate()?;
            let shapes: Vec<_> = enc.layers.iter().map(|l| (l.in_dim(), l.out_dim())).collect();
            ensure!(
                shapes == self.dims.encoder_shapes(m),
                "encoder {m} layer shapes {shapes:?} disagree with dims"
            );
        }
        ensure!(
            self.head.in_dim() == self.dims.feature_dim
                && self.head.out_dim() == self.dims.class_count,
            "head is {}x{}, expected {}x{}",
            self.head.in_dim(),
            self.head.out_dim(),
            self.dims.feature_dim,
            self.dims.class_count
        );
        Ok(())
    }
}

impl ParamTensors for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoders.iter().flat_map(|e| e.tensors()).collect();
        out.extend(self.head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> =
            self.encoders.iter_mut().flat_map(|e| e.tensors_mut()).collect();
        out.extend(self.head.tensors_mut());
        out
    }
}

impl Dense {
    pub(crate) fn to_tensors(&self, prefix: &str) -> [NamedTensor; 2] {
        [
            NamedTensor {
                name: format!("{prefix}.weight"),
                rows: self.in_dim(),
                cols: self.out_dim(),
                data: self.weight.data().to_vec(),
            },
            NamedTensor {
                name: format!("{prefix}.bias"),
                rows: 1,
                cols: self.out_dim(),
                data: self.bias.clone(),
            },
        ]
    }

    pub(crate) fn from_checkpoint(ckpt: &mut Checkpoint, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let w = ckpt.take(&format!("{prefix}.weight"), fan_in, fan_out)?;
        let bias = ckpt.take(&format!("{prefix}.bias"), 1, fan_out)?;
        Ok(Dense {
            weight: Mat::from_vec(fan_in, fan_out, w)?,
            bias,
        })
    }
}

impl EncoderParams {
    pub(crate) fn to_tensors(&self, m: usize) -> Vec<NamedTensor> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, d)| d.to_tensors(&format!("encoder.{m}.layer.{l}")))
            .collect()
    }

    pub(crate) fn from_checkpoint(ckpt: &mut Checkpoint, m: usize) -> Result<Self> {
        let shapes = ckpt.dims.encoder_shapes(m);
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(l, &(i, o))| Dense::from_checkpoint(ckpt, &format!("encoder.{m}.layer.{l}"), i, o))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderParams { layers })
    }
}

impl ModelParams {
    pub fn to_checkpoint(&self, step: usize) -> Checkpoint {
        let mut tensors: Vec<NamedTensor> = self
            .encoders
            .iter()
            .enumerate()
            .flat_map(|(m, e)| e.to_tensors(m))
            .collect();
        tensors.extend(self.head.to_tensors("head"));
        Checkpoint {
            kind: ModelKind::Mla,
            dims: self.dims.clone(),
            step,
            trained: None,
            tensors,
        }
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != ModelKind::Mla {
            return Err(crate::Error::Schema(format!(
                "expected an mla checkpoint, found {}",
                ckpt.kind
            )));
        }
        let encoders = (0..ckpt.dims.modality_count())
            .map(|m| EncoderParams::from_checkpoint(&mut ckpt, m))
            .collect::<Result<Vec<_>>>()?;
        let (s, c) = (ckpt.dims.feature_dim, ckpt.dims.class_count);
        let head = Dense::from_checkpoint(&mut ckpt, "head", s, c)?;
        if let Some(extra) = ckpt.tensors.first() {
            return Err(crate::Error::Schema(format!("unexpected tensor {:?}", extra.name)));
        }
        let params = ModelParams {
            dims: ckpt.dims,
            encoders,
            head,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Seeded initialization. Encoder `m` draws from stream `INIT + m`, the head
/// from `INIT + M`.
pub fn init_params(dims: &ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let m_count = dims.modality_count();
    let encoders = (0..m_count)
        .map(|m| {
            let mut rng = Rng::stream(seed, streams::INIT + m as u64);
            EncoderParams::init(&dims.encoder_shapes(m), &mut rng)
        })
        .collect();
    let mut rng = Rng::stream(seed, streams::INIT + m_count as u64);
    Ok(ModelParams {
        dims: dims.clone(),
        encoders,
        head: Dense::glorot(dims.feature_dim, dims.class_count, &mut rng),
    })
}

/// Features `h_m(x)` for a batch of modality-`m` rows.
pub fn encode(params: &ModelParams, m: usize, x: &Mat) -> Result<Mat> {
    ensure!(m < params.encoders.len(), "modality {m} out of range");
    params.encoders[m].forward(x)
}

pub fn head_logits(head: &HeadParams, features: &Mat) -> Result<Mat> {
    head.forward(features)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn cross_entropy(logits: &Mat, labels: &[u32]) -> Result<(f64, Mat)> {
    let b = logits.rows();
    ensure!(b > 0, "cross-entropy over an empty batch");
    ensure!(b == labels.len(), "logit rows {b} != label count {}", labels.len());
    let c = logits.cols();
    let mut loss = 0.0;
    let mut grad = Mat::zeros(b, c);
    for (i, &label) in labels.iter().enumerate() {
        let y = label as usize;
        ensure!(y < c, "label {y} out of range for {c} classes");
        loss -= log_softmax(logits.row(i))?[y];
        let p = softmax(logits.row(i))?;
        for (k, (g, pk)) in grad.row_mut(i).iter_mut().zip(&p).enumerate() {
            *g = (pk - if k == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Column means of a batch.
pub fn mean_rows(x: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (o, v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    let n = x.rows().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Gradients for one modality-`m` batch through encoder `m` and the head.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub encoder: EncoderParams,
    pub head: HeadParams,
    /// Average encoder output over the batch.
    pub mean_feature: Vec<f64>,
    pub loss: f64,
}

impl GradBundle {
    fn scaled_into(&mut self, k: f64) {
        for t in self.encoder.tensors_mut().into_iter().chain(self.head.tensors_mut()) {
            t.iter_mut().for_each(|v| *v *= k);
        }
        self.mean_feature.iter_mut().for_each(|v| *v *= k);
        self.loss *= k;
    }

    fn add_assign(&mut self, other: &GradBundle) {
        let dst = self.encoder.tensors_mut().into_iter().chain(self.head.tensors_mut());
        let src = other.encoder.tensors().into_iter().chain(other.head.tensors());
        for (d, s) in dst.zip(src) {
            for (a, b) in d.iter_mut().zip(s) {
                *a += b;
            }
        }
        for (a, b) in self.mean_feature.iter_mut().zip(&other.mean_feature) {
            *a += b;
        }
        self.loss += other.loss;
    }
}

/// How per-sample contributions are summed within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Reduction {
    /// Single thread, left to right.
    #[default]
    Sequential,
    /// Fixed-size row chunks evaluated in parallel and combined by a pairwise
    /// tree in chunk order. Bit-identical for any thread count, though not to
    /// `Sequential`.
    ChunkedTree { chunk: usize },
}

/// Loss and exact gradients of the mean cross-entropy of `f_m = g ∘ h_m`.
///
/// Only encoder `m` and the head appear in the graph, so no other encoder can
/// receive a gradient.
pub fn loss_and_grads(params: &ModelParams, m: usize, x: &Mat, labels: &[u32]) -> Result<GradBundle> {
    ensure!(m < params.encoders.len(), "modality {m} out of range");
    ensure!(x.rows() > 0, "loss_and_grads on an empty batch");
    ensure!(
        x.rows() == labels.len(),
        "batch has {} rows but {} labels",
        x.rows(),
        labels.len()
    );
    let encoder = &params.encoders[m];
    let (features, trace) = encoder.forward_trace(x)?;
    let logits = params.head.forward(&features)?;
    let (loss, d_logits) = cross_entropy(&logits, labels)?;
    let (head, d_features) = params.head.backward(&features, &d_logits)?;
    let encoder = encoder.backward(&trace, &d_features)?;
    Ok(GradBundle {
        encoder,
        head,
        mean_feature: mean_rows(&features),
        loss,
    })
}

/// [`loss_and_grads`] under a chosen [`Reduction`].
pub fn loss_and_grads_with(
    params: &ModelParams,
    m: usize,
    x: &Mat,
    labels: &[u32],
    reduction: Reduction,
) -> Result<GradBundle> {
    let chunk = match reduction {
        Reduction::Sequential => return loss_and_grads(params, m, x, labels),
        Reduction::ChunkedTree { chunk } => chunk,
    };
    ensure!(chunk >= 1, "reduction chunk must be at least 1");
    ensure!(x.rows() > 0, "loss_and_grads on an empty batch");
    ensure!(x.rows() == labels.len(), "batch rows and labels differ");
    let b = x.rows();
    let ranges: Vec<(usize, usize)> = (0..b).step_by(chunk).map(|s| (s, (s + chunk).min(b))).collect();
    let mut parts = ranges
        .par_iter()
        .map(|&(s, e)| {
            let idx: Vec<usize> = (s..e).collect();
            let mut g = loss_and_grads(params, m, &x.select_rows(&idx), &labels[s..e])?;
            // Means over the chunk become sums so chunks combine by addition.
            g.scaled_into((e - s) as f64);
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.add_assign(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    let mut total = parts.pop().expect("at least one chunk");
    total.scaled_into(1.0 / b as f64);
    Ok(total)
}

/// Momentum SGD: `v ← μ·v + g`, then `θ ← θ − γ·v`.
pub fn sgd_update<P: ParamTensors>(
    params: &mut P,
    grads: &P,
    lr: f64,
    momentum: f64,
    velocity: &mut P,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    let mut v = velocity.tensors_mut();
    ensure!(
        g.len() == p.len() && v.len() == p.len(),
        "sgd_update tensor counts differ"
    );
    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(&g) {
        ensure!(
            p.len() == g.len() && v.len() == g.len(),
            "sgd_update tensor shapes differ"
        );
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::matvec;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            input_dims: vec![3, 5],
            hidden: vec![4],
            feature_dim: 3,
            class_count: 3,
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let dims = tiny_dims();
        let a = init_params(&dims, 4).unwrap();
        assert_eq!(a, init_params(&dims, 4).unwrap());
        assert_ne!(a, init_params(&dims, 5).unwrap());
        a.validate().unwrap();
        let layers = a.encoders.iter().flat_map(|e| &e.layers).chain([&a.head]);
        for l in layers {
            assert!(l.bias.iter().all(|&b| b == 0.0));
            let limit = (6.0 / (l.in_dim() + l.out_dim()) as f64).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn zero_encoder_gives_zero_features() {
        let mut p = init_params(&tiny_dims(), 0).unwrap();
        p.encoders[1] = p.encoders[1].zeros_like();
        let x = Mat::from_fn(4, 5, |i, j| (i + j) as f64);
        let h = encode(&p, 1, &x).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
        assert!(encode(&p, 1, &Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn single_layer_encoder_is_affine() {
        let mut rng = Rng::new(2);
        let enc = EncoderParams::init(&[(3, 2)], &mut rng);
        let mut enc = enc;
        enc.layers[0].bias = vec![0.5, -1.0];
        let x = [0.3, -0.2, 1.5];
        let out = enc.forward(&Mat::from_rows(&[&x])).unwrap();
        let expected = matvec(&enc.layers[0].weight.transpose(), &x).unwrap();
        assert_eq!(out.row(0), &[expected[0] + 0.5, expected[1] - 1.0][..]);
    }

    #[test]
    fn head_logits_cases() {
        let head = Dense::zeros(3, 3);
        let f = Mat::from_rows(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(head_logits(&head, &f).unwrap().row(0), &[0.0, 0.0, 0.0]);
        let head = Dense {
            weight: Mat::identity(3),
            bias: vec![0.1, 0.2, 0.3],
        };
        assert_eq!(head_logits(&head, &f).unwrap().row(0), &[1.1, 2.2, 3.3]);
        assert!(head_logits(&head, &Mat::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_head_loss_is_log_c() {
        let mut p = init_params(&tiny_dims(), 1).unwrap();
        p.head = Dense::zeros(3, 3);
        let x = Mat::from_fn(5, 3, |i, j| (i as f64) - (j as f64));
        let g = loss_and_grads(&p, 0, &x, &[0, 1, 2, 0, 1]).unwrap();
        assert_eq!(g.loss, 3f64.ln());
        assert!(loss_and_grads(&p, 0, &Mat::zeros(0, 3), &[]).is_err());
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = Dense::zeros(1, 1);
        let g = Dense {
            weight: Mat::from_rows(&[&[1.0]]),
            bias: vec![0.0],
        };
        let mut v = p.zeros_like();
        sgd_update(&mut p, &g, 0.1, 0.9, &mut v).unwrap();
        assert!((p.weight.get(0, 0) + 0.1).abs() < 1e-15);
        sgd_update(&mut p, &g, 0.1, 0.9, &mut v).unwrap();
        assert!((p.weight.get(0, 0) + 0.29).abs() < 1e-15);

        // Zero gradient: parameters stay, velocity decays.
        let before = p.clone();
        let zero = g.zeros_like();
        let v_before = v.weight.get(0, 0);
        sgd_update(&mut p, &zero, 0.0, 0.9, &mut v).unwrap();
        assert_eq!(p, before);
        assert!((v.weight.get(0, 0) - 0.9 * v_before).abs() < 1e-15);

        // μ = 0 is a plain gradient step.
        let mut q = before.clone();
        let mut v0 = q.zeros_like();
        sgd_update(&mut q, &g, 0.5, 0.0, &mut v0).unwrap();
        assert!((q.weight.get(0, 0) - (before.weight.get(0, 0) - 0.5)).abs() < 1e-15);

        let wrong = Dense::zeros(2, 1);
        assert!(sgd_update(&mut q, &wrong, 0.1, 0.9, &mut v0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_params(&tiny_dims(), 12).unwrap();
        save_checkpoint(&p.to_checkpoint(7), dir.path()).unwrap();
        let ckpt = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ckpt.step, 7);
        let back = ModelParams::from_checkpoint(ckpt).unwrap();
        let bits = |m: &ModelParams| -> Vec<u64> {
            m.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&p));

        let bin = dir.path().join("params.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(crate::Error::Parse { .. })
        ));
    }

    #[test]
    fn chunked_reduction_is_thread_count_independent() {
        let p = init_params(&tiny_dims(), 3).unwrap();
        let mut rng = Rng::new(9);
        let x = Mat::from_fn(37, 3, |_, _| rng.normal());
        let y: Vec<u32> = (0..37).map(|i| (i % 3) as u32).collect();
        let seq = loss_and_grads(&p, 0, &x, &y).unwrap();
        let red = Reduction::ChunkedTree { chunk: 8 };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| loss_and_grads_with(&p, 0, &x, &y, red).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| loss_and_grads_with(&p, 0, &x, &y, red).unwrap());
        assert_eq!(one, many);
        assert!((one.loss - seq.loss).abs() < 1e-12);
        for (a, b) in one.head.weight.data().iter().zip(seq.head.weight.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

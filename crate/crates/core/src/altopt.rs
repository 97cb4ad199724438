//! Alternating unimodal training.
//!
//! Step `t` trains modality `t mod M` for one epoch over the samples that carry
//! it: its encoder takes plain momentum-SGD steps and the shared head takes
//! steps along `P · ∇φ`, where `P` is the modification matrix. After the epoch
//! the modality's mean feature `h̄` over all of its training rows is folded into
//! `P` by a recursive-least-squares update, so later head updates for other
//! modalities avoid that direction.

use serde::{Deserialize, Serialize};

use crate::data::{minibatches, MultimodalDataset};
use crate::error::{ensure, Error, Result};
use crate::model::{
    encode, init_params, loss_and_grads_with, sgd_update, EncoderParams, HeadParams, ModelDims,
    ModelParams, ParamTensors, Reduction,
};
use crate::numkernel::{dot, matvec, Mat};

/// Modality trained at step `t`.
pub fn modality_at(t: usize, modalities: usize) -> Result<usize> {
    ensure!(modalities >= 1, "modality count must be at least 1");
    Ok(t % modalities)
}

/// The `s × s` head-gradient modification matrix and its regularizer `α`.
///
/// Starting from the identity, each update with feature `h̄` applies
///
/// ```text
/// q  = P h̄ / (α + h̄ᵀ P h̄)
/// P' = P − q h̄ᵀ P
/// ```
///
/// which keeps `P = (I + α⁻¹ Σ h̄ h̄ᵀ)⁻¹` over all features seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ModMatrix {
    p: Mat,
    alpha: f64,
}

impl ModMatrix {
    pub fn identity(feature_dim: usize, alpha: f64) -> Result<Self> {
        ensure!(
            alpha > 0.0 && alpha.is_finite(),
            "alpha must be positive and finite, got {alpha}"
        );
        Ok(Self {
            p: Mat::identity(feature_dim),
            alpha,
        })
    }

    pub fn matrix(&self) -> &Mat {
        &self.p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    /// Folds `hbar` into `P` and returns the gain vector `q`.
    pub fn update(&mut self, hbar: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            hbar.len() == self.dim(),
            "feature length {} does not match modification matrix size {}",
            hbar.len(),
            self.dim()
        );
        let ph = matvec(&self.p, hbar)?;
        let denom = self.alpha + dot(hbar, &ph);
        let q: Vec<f64> = ph.iter().map(|v| v / denom).collect();
        // hᵀP is (P h)ᵀ for symmetric P.
        for (i, &qi) in q.iter().enumerate() {
            if qi == 0.0 {
                continue;
            }
            for (pij, phj) in self.p.row_mut(i).iter_mut().zip(&ph) {
                *pij -= qi * phj;
            }
        }
        self.p.symmetrize();
        Ok(q)
    }
}

/// Functional form of [`ModMatrix::update`].
pub fn update_mod_matrix(mm: &ModMatrix, hbar: &[f64]) -> Result<ModMatrix> {
    let mut next = mm.clone();
    next.update(hbar)?;
    Ok(next)
}

/// Head gradient as applied at step `t`: unchanged at `t = 0`, otherwise each
/// class column of the weight gradient is premultiplied by `P`. The bias
/// gradient has no feature direction and passes through.
pub fn modify_gradient(mm: &ModMatrix, g: &HeadParams, t: usize) -> Result<HeadParams> {
    ensure!(
        g.in_dim() == mm.dim(),
        "head gradient has {} feature rows, modification matrix is {}x{}",
        g.in_dim(),
        mm.dim(),
        mm.dim()
    );
    if t == 0 {
        return Ok(g.clone());
    }
    Ok(HeadParams {
        weight: mm.p.matmul(&g.weight)?,
        bias: g.bias.clone(),
    })
}

/// Rows encoded per chunk when averaging features.
const FEATURE_CHUNK: usize = 1024;

/// Mean of `h_m(x)` over every sample of `ds` carrying modality `m`, or `None`
/// if there is none.
pub fn average_feature(
    params: &ModelParams,
    m: usize,
    ds: &MultimodalDataset,
) -> Result<Option<Vec<f64>>> {
    ensure!(m < ds.modality_count(), "modality {m} out of range");
    let idx = ds.present_indices(m);
    if idx.is_empty() {
        return Ok(None);
    }
    let mut sum = vec![0.0; params.dims.feature_dim];
    for chunk in idx.chunks(FEATURE_CHUNK) {
        let h = encode(params, m, &ds.table(m).select_rows(chunk))?;
        for i in 0..h.rows() {
            for (s, v) in sum.iter_mut().zip(h.row(i)) {
                *s += v;
            }
        }
    }
    let n = idx.len() as f64;
    Ok(Some(sum.into_iter().map(|s| s / n).collect()))
}

fn default_lr() -> f64 {
    0.001
}
fn default_momentum() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    0.1
}
fn default_batch() -> usize {
    64
}
fn default_alpha() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_feature_dim() -> usize {
    32
}

/// Optimizer, schedule and architecture settings for a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of alternation steps `T`; each step is one epoch of one modality.
    pub total_steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Factor applied to the learning rate at each step listed in `decay_steps`.
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub decay_steps: Vec<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Head gradient modification.
    #[serde(default = "default_true")]
    pub hgm_enabled: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 60,
            lr: default_lr(),
            momentum: default_momentum(),
            lr_decay: default_decay(),
            decay_steps: Vec::new(),
            batch_size: default_batch(),
            alpha: default_alpha(),
            hgm_enabled: true,
            seed: 0,
            hidden: default_hidden(),
            feature_dim: default_feature_dim(),
            reduction: Reduction::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if let Reduction::ChunkedTree { chunk: 0 } = self.reduction {
            return bad("reduction chunk must be at least 1".into());
        }
        Ok(())
    }

    /// Learning rate in effect at step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let decays = self.decay_steps.iter().filter(|&&s| s <= t).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }

    pub fn model_dims(&self, ds: &MultimodalDataset) -> ModelDims {
        ModelDims {
            input_dims: ds.modality_dims().to_vec(),
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            class_count: ds.class_count(),
        }
    }

    /// Number of steps at which modality `m` is scheduled among `modalities`.
    pub fn steps_for(&self, m: usize, modalities: usize) -> usize {
        (0..self.total_steps).filter(|t| t % modalities == m).count()
    }
}

/// What happened at one alternation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub modality: usize,
    /// Sample-weighted mean of the batch losses; `None` when the modality had no
    /// samples and the step was skipped.
    pub mean_loss: Option<f64>,
    pub lr: f64,
    pub batches: usize,
}

/// Momentum buffers, one per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub encoders: Vec<EncoderParams>,
    pub head: HeadParams,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub params: ModelParams,
    pub mod_matrix: ModMatrix,
    pub velocity: Velocity,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, dims: &ModelDims) -> Result<Self> {
        config.validate()?;
        let params = init_params(dims, config.seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: &TrainConfig, params: ModelParams) -> Result<Self> {
        params.validate()?;
        let velocity = Velocity {
            encoders: params.encoders.iter().map(EncoderParams::zeros_like).collect(),
            head: params.head.zeros_like(),
        };
        Ok(Self {
            step: 0,
            mod_matrix: ModMatrix::identity(params.dims.feature_dim, config.alpha)?,
            params,
            velocity,
            history: Vec::new(),
        })
    }
}

/// Runs alternation step `state.step` and advances it.
pub fn train_step(state: &mut TrainState, ds: &MultimodalDataset, config: &TrainConfig) -> Result<()> {
    let t = state.step;
    let m = modality_at(t, ds.modality_count())?;
    ensure!(
        ds.modality_dims() == state.params.dims.input_dims.as_slice()
            && ds.class_count() == state.params.dims.class_count,
        "dataset shape does not match the model"
    );
    let lr = config.lr_at(t);
    let batches = minibatches(ds, m, config.batch_size, config.seed, t as u64)?;
    if batches.is_empty() {
        log::info!("step {t}: modality {m} has no samples, skipping");
        state.history.push(StepRecord {
            step: t,
            modality: m,
            mean_loss: None,
            lr,
            batches: 0,
        });
        state.step += 1;
        return Ok(());
    }

    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for batch in &batches {
        let (x, y) = ds.gather(m, batch);
        let grads = loss_and_grads_with(&state.params, m, &x, &y, config.reduction)?;
        if !grads.loss.is_finite() {
            return Err(Error::NonFinite { step: t });
        }
        loss_sum += grads.loss * batch.len() as f64;
        seen += batch.len();

        sgd_update(
            &mut state.params.encoders[m],
            &grads.encoder,
            lr,
            config.momentum,
            &mut state.velocity.encoders[m],
        )?;
        let head_grad = if config.hgm_enabled {
            modify_gradient(&state.mod_matrix, &grads.head, t)?
        } else {
            grads.head
        };
        sgd_update(
            &mut state.params.head,
            &head_grad,
            lr,
            config.momentum,
            &mut state.velocity.head,
        )?;
    }
    if !state.params.all_finite() {
        return Err(Error::NonFinite { step: t });
    }

    if config.hgm_enabled {
        if let Some(hbar) = average_feature(&state.params, m, ds)? {
            state.mod_matrix.update(&hbar)?;
        }
    }

    state.history.push(StepRecord {
        step: t,
        modality: m,
        mean_loss: Some(loss_sum / seen as f64),
        lr,
        batches: batches.len(),
    });
    state.step += 1;
    Ok(())
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub mod_matrix: ModMatrix,
    pub history: Vec<StepRecord>,
}

/// Full alternating training run.
pub fn train(config: &TrainConfig, ds: &MultimodalDataset) -> Result<TrainOutcome> {
    train_with(config, ds, |_| {})
}

/// [`train`], reporting each step record as it is produced.
pub fn train_with(
    config: &TrainConfig,
    ds: &MultimodalDataset,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    ds.validate()?;
    let mut state = TrainState::new(config, &config.model_dims(ds))?;
    while state.step < config.total_steps {
        train_step(&mut state, ds, config)?;
        on_step(state.history.last().expect("step recorded"));
    }
    Ok(TrainOutcome {
        params: state.params,
        mod_matrix: state.mod_matrix,
        history: state.history,
    })
}

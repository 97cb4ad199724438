//! Joint-training comparators and the unimodal probe protocol.
//!
//! [`ConcatModel`] concatenates every encoder output into one wide head and
//! trains all pathways together on fully paired samples. [`LateFusionModel`]
//! trains one (encoder, head) pair per modality in isolation and averages the
//! resulting logits. [`TrainedModel`] wraps either of them or an MLA model so
//! evaluation code can treat the three alike.

use serde::{Deserialize, Serialize};

use crate::altopt::{StepRecord, TrainConfig};
use crate::data::{minibatches, MultimodalDataset};
use crate::error::{ensure, Error, Result};
use crate::eval::accuracy;
use crate::fusion::{fuse_dataset, FusionMode};
use crate::model::{
    cross_entropy, encode, head_logits, init_params, loss_and_grads_with, sgd_update, Checkpoint,
    Dense, EncoderParams, ModelDims, ModelKind, ModelParams, ParamTensors,
};
use crate::numkernel::{argmax, streams, Mat, Rng};

/// `M` encoders feeding one head over their concatenated outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatModel {
    pub dims: ModelDims,
    pub encoders: Vec<EncoderParams>,
    /// `M·s × C`; block `m` of the rows reads encoder `m`.
    pub head: Dense,
}

/// `M` independent unimodal classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct LateFusionModel {
    pub dims: ModelDims,
    pub encoders: Vec<EncoderParams>,
    /// `s × C` each.
    pub heads: Vec<Dense>,
    /// Whether pathway `m` saw any training data.
    pub trained: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Mla(ModelParams),
    Concat(ConcatModel),
    Late(LateFusionModel),
}

#[derive(Debug, Clone, PartialEq)]
struct ConcatGrads {
    encoders: Vec<EncoderParams>,
    head: Dense,
}

impl ParamTensors for ConcatGrads {
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

impl ConcatModel {
    /// Encoders from the same streams as [`init_params`]; the wide head from
    /// stream `INIT + M`.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        let base = init_params(dims, seed)?;
        let mm = dims.modality_count();
        let mut rng = Rng::stream(seed, streams::INIT + mm as u64);
        Ok(Self {
            dims: dims.clone(),
            encoders: base.encoders,
            head: Dense::glorot(mm * dims.feature_dim, dims.class_count, &mut rng),
        })
    }

    /// Concatenated features; modality `m`'s block is zero where `active[m]`
    /// is false or the row's entry in `present` (if given) is false.
    fn features(&self, tables: &[&Mat], active: &[bool], present: Option<&[Vec<bool>]>) -> Result<Mat> {
        let s = self.dims.feature_dim;
        let n = tables[0].rows();
        let mut out = Mat::zeros(n, s * self.encoders.len());
        for (m, enc) in self.encoders.iter().enumerate() {
            if !active[m] {
                continue;
            }
            let h = enc.forward(tables[m])?;
            for i in 0..n {
                if present.is_some_and(|p| !p[m][i]) {
                    continue;
                }
                out.row_mut(i)[m * s..(m + 1) * s].copy_from_slice(h.row(i));
            }
        }
        Ok(out)
    }

    fn loss_and_grads(&self, xs: &[Mat], labels: &[u32]) -> Result<(f64, ConcatGrads)> {
        let s = self.dims.feature_dim;
        let mut traces = Vec::with_capacity(xs.len());
        let mut feats = Mat::zeros(labels.len(), s * xs.len());
        for (m, (enc, x)) in self.encoders.iter().zip(xs).enumerate() {
            let (h, trace) = enc.forward_trace(x)?;
            for i in 0..h.rows() {
                feats.row_mut(i)[m * s..(m + 1) * s].copy_from_slice(h.row(i));
            }
            traces.push(trace);
        }
        let (loss, d_logits) = cross_entropy(&self.head.forward(&feats)?, labels)?;
        let (head, d_feats) = self.head.backward(&feats, &d_logits)?;
        let encoders = self
            .encoders
            .iter()
            .zip(&traces)
            .enumerate()
            .map(|(m, (enc, trace))| {
                let block = Mat::from_fn(d_feats.rows(), s, |i, j| d_feats.get(i, m * s + j));
                enc.backward(trace, &block)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, ConcatGrads { encoders, head }))
    }
}

impl LateFusionModel {
    /// Encoder `m` from stream `INIT + m`, head `m` from stream `INIT + M + m`.
    pub fn init(dims: &ModelDims, seed: u64) -> Result<Self> {
        let base = init_params(dims, seed)?;
        let mm = dims.modality_count();
        let heads = (0..mm)
            .map(|m| {
                let mut rng = Rng::stream(seed, streams::INIT + (mm + m) as u64);
                Dense::glorot(dims.feature_dim, dims.class_count, &mut rng)
            })
            .collect();
        Ok(Self {
            dims: dims.clone(),
            encoders: base.encoders,
            heads,
            trained: vec![false; mm],
        })
    }

    /// Pathway `m` as a single-modality model.
    pub fn pathway(&self, m: usize) -> ModelParams {
        ModelParams {
            dims: ModelDims {
                input_dims: vec![self.dims.input_dims[m]],
                ..self.dims.clone()
            },
            encoders: vec![self.encoders[m].clone()],
            head: self.heads[m].clone(),
        }
    }
}

/// Joint training of a [`ConcatModel`] on the fully paired samples of `ds`.
///
/// Runs `⌈T / M⌉` epochs so every encoder sees as many epochs as under the
/// alternating schedule. Epoch `e` uses the learning rate of step `e·M`.
pub fn train_concat(config: &TrainConfig, ds: &MultimodalDataset) -> Result<(ConcatModel, Vec<StepRecord>)> {
    config.validate()?;
    ds.validate()?;
    let dims = config.model_dims(ds);
    let mm = dims.modality_count();
    let paired = ds.subset(&ds.fully_present_indices());
    ensure!(!paired.is_empty(), "concatenation needs fully paired samples");
    let mut model = ConcatModel::init(&dims, config.seed)?;
    let mut velocity = ConcatGrads {
        encoders: model.encoders.iter().map(EncoderParams::zeros_like).collect(),
        head: model.head.zeros_like(),
    };
    let mut history = Vec::new();
    for epoch in 0..config.total_steps.div_ceil(mm) {
        let t = epoch * mm;
        let lr = config.lr_at(t);
        let batches = minibatches(&paired, 0, config.batch_size, config.seed, epoch as u64)?;
        let mut loss_sum = 0.0;
        for batch in &batches {
            let xs: Vec<Mat> = (0..mm).map(|m| paired.gather(m, batch).0).collect();
            let labels: Vec<u32> = batch.iter().map(|&i| paired.labels()[i]).collect();
            let (loss, grads) = model.loss_and_grads(&xs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { step: epoch });
            }
            loss_sum += loss * batch.len() as f64;
            let mut params = ConcatGrads {
                encoders: std::mem::take(&mut model.encoders),
                head: model.head.clone(),
            };
            sgd_update(&mut params, &grads, lr, config.momentum, &mut velocity)?;
            model.encoders = params.encoders;
            model.head = params.head;
        }
        if !model.encoders.iter().all(|e| e.all_finite()) || !model.head.all_finite() {
            return Err(Error::NonFinite { step: epoch });
        }
        history.push(StepRecord {
            step: epoch,
            modality: 0,
            mean_loss: Some(loss_sum / paired.len() as f64),
            lr,
            batches: batches.len(),
        });
    }
    Ok((model, history))
}

/// Independent training of each unimodal pathway.
///
/// Pathway `m` trains for exactly the steps `t` with `t mod M = m`, using the
/// learning rate and batch order of that step, and reads only table `m`.
pub fn train_late_fusion(
    config: &TrainConfig,
    ds: &MultimodalDataset,
) -> Result<(LateFusionModel, Vec<StepRecord>)> {
    config.validate()?;
    ds.validate()?;
    let dims = config.model_dims(ds);
    let mm = dims.modality_count();
    let mut model = LateFusionModel::init(&dims, config.seed)?;
    let mut history = Vec::new();
    for m in 0..mm {
        let mut path = model.pathway(m);
        let mut v_enc = path.encoders[0].zeros_like();
        let mut v_head = path.head.zeros_like();
        for t in (m..config.total_steps).step_by(mm) {
            let lr = config.lr_at(t);
            let batches = minibatches(ds, m, config.batch_size, config.seed, t as u64)?;
            let mut loss_sum = 0.0;
            let mut seen = 0;
            for batch in &batches {
                let (x, y) = ds.gather(m, batch);
                let g = loss_and_grads_with(&path, 0, &x, &y, config.reduction)?;
                if !g.loss.is_finite() {
                    return Err(Error::NonFinite { step: t });
                }
                loss_sum += g.loss * batch.len() as f64;
                seen += batch.len();
                sgd_update(&mut path.encoders[0], &g.encoder, lr, config.momentum, &mut v_enc)?;
                sgd_update(&mut path.head, &g.head, lr, config.momentum, &mut v_head)?;
            }
            if !path.all_finite() {
                return Err(Error::NonFinite { step: t });
            }
            model.trained[m] |= seen > 0;
            history.push(StepRecord {
                step: t,
                modality: m,
                mean_loss: (seen > 0).then(|| loss_sum / seen as f64),
                lr,
                batches: batches.len(),
            });
        }
        let ModelParams { encoders, head, .. } = path;
        model.encoders[m] = encoders.into_iter().next().expect("one encoder");
        model.heads[m] = head;
    }
    history.sort_by_key(|r| r.step);
    Ok((model, history))
}

fn head_tensors(model: &TrainedModel) -> Vec<crate::model::NamedTensor> {
    match model {
        TrainedModel::Mla(p) => p.head.to_tensors("head").into(),
        TrainedModel::Concat(c) => c.head.to_tensors("head").into(),
        TrainedModel::Late(l) => l
            .heads
            .iter()
            .enumerate()
            .flat_map(|(m, h)| h.to_tensors(&format!("head.{m}")))
            .collect(),
    }
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Mla(_) => ModelKind::Mla,
            TrainedModel::Concat(_) => ModelKind::Concat,
            TrainedModel::Late(_) => ModelKind::Late,
        }
    }

    pub fn dims(&self) -> &ModelDims {
        match self {
            TrainedModel::Mla(p) => &p.dims,
            TrainedModel::Concat(c) => &c.dims,
            TrainedModel::Late(l) => &l.dims,
        }
    }

    pub fn encoder(&self, m: usize) -> &EncoderParams {
        match self {
            TrainedModel::Mla(p) => &p.encoders[m],
            TrainedModel::Concat(c) => &c.encoders[m],
            TrainedModel::Late(l) => &l.encoders[m],
        }
    }

    /// Whether modality `m` can be probed.
    pub fn is_trained(&self, m: usize) -> bool {
        match self {
            TrainedModel::Late(l) => l.trained[m],
            _ => true,
        }
    }

    /// Logits from modality `m` alone. Concatenation zeroes the other blocks.
    pub fn modality_logits(&self, m: usize, x: &Mat) -> Result<Mat> {
        ensure!(m < self.dims().modality_count(), "modality {m} out of range");
        match self {
            TrainedModel::Mla(p) => head_logits(&p.head, &encode(p, m, x)?),
            TrainedModel::Concat(c) => {
                let mm = c.encoders.len();
                let placeholder = Mat::zeros(x.rows(), 1);
                let tables: Vec<&Mat> = (0..mm).map(|k| if k == m { x } else { &placeholder }).collect();
                let active: Vec<bool> = (0..mm).map(|k| k == m).collect();
                c.head.forward(&c.features(&tables, &active, None)?)
            }
            TrainedModel::Late(l) => {
                ensure!(l.trained[m], "late-fusion modality {m} was never trained");
                l.heads[m].forward(&l.encoders[m].forward(x)?)
            }
        }
    }

    /// Predicted class of every sample in `ds` using all its present
    /// modalities. `mode` only affects the MLA model; late fusion always
    /// averages and concatenation zeroes absent blocks.
    pub fn predict_classes(&self, ds: &MultimodalDataset, mode: FusionMode) -> Result<Vec<usize>> {
        ensure!(
            ds.modality_dims() == self.dims().input_dims.as_slice()
                && ds.class_count() == self.dims().class_count,
            "dataset shape does not match the model"
        );
        let mm = ds.modality_count();
        match self {
            TrainedModel::Concat(c) => {
                let present: Vec<Vec<bool>> = (0..mm)
                    .map(|m| (0..ds.len()).map(|i| ds.is_present(i, m)).collect())
                    .collect();
                let tables: Vec<&Mat> = ds.tables().iter().collect();
                let logits = c.head.forward(&c.features(&tables, &vec![true; mm], Some(&present))?)?;
                Ok((0..ds.len()).map(|i| argmax(logits.row(i))).collect())
            }
            _ => {
                let mut cols = Vec::with_capacity(mm);
                for m in 0..mm {
                    let mut col = vec![None; ds.len()];
                    let idx = ds.present_indices(m);
                    if self.is_trained(m) && !idx.is_empty() {
                        let logits = self.modality_logits(m, &ds.table(m).select_rows(&idx))?;
                        for (r, &i) in idx.iter().enumerate() {
                            col[i] = Some(logits.row(r).to_vec());
                        }
                    }
                    cols.push(col);
                }
                let mode = match self {
                    TrainedModel::Late(_) => FusionMode::Uniform,
                    _ => mode,
                };
                Ok(fuse_dataset(&cols, mode)?.into_iter().map(|r| r.class).collect())
            }
        }
    }

    pub fn to_checkpoint(&self, step: usize) -> Checkpoint {
        let (encoders, trained) = match self {
            TrainedModel::Mla(p) => return p.to_checkpoint(step),
            TrainedModel::Concat(c) => (&c.encoders, None),
            TrainedModel::Late(l) => (&l.encoders, Some(l.trained.clone())),
        };
        let mut tensors: Vec<_> = encoders.iter().enumerate().flat_map(|(m, e)| e.to_tensors(m)).collect();
        tensors.extend(head_tensors(self));
        Checkpoint {
            kind: self.kind(),
            dims: self.dims().clone(),
            step,
            trained,
            tensors,
        }
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind == ModelKind::Mla {
            return Ok(TrainedModel::Mla(ModelParams::from_checkpoint(ckpt)?));
        }
        let dims = ckpt.dims.clone();
        let mm = dims.modality_count();
        let (s, c) = (dims.feature_dim, dims.class_count);
        let encoders = (0..mm)
            .map(|m| EncoderParams::from_checkpoint(&mut ckpt, m))
            .collect::<Result<Vec<_>>>()?;
        let model = match ckpt.kind {
            ModelKind::Concat => TrainedModel::Concat(ConcatModel {
                head: Dense::from_checkpoint(&mut ckpt, "head", mm * s, c)?,
                dims,
                encoders,
            }),
            _ => {
                let trained = ckpt.trained.clone().unwrap_or_else(|| vec![true; mm]);
                if trained.len() != mm {
                    return Err(Error::Schema(format!(
                        "trained flags cover {} modalities, expected {mm}",
                        trained.len()
                    )));
                }
                let heads = (0..mm)
                    .map(|m| Dense::from_checkpoint(&mut ckpt, &format!("head.{m}"), s, c))
                    .collect::<Result<Vec<_>>>()?;
                TrainedModel::Late(LateFusionModel {
                    dims,
                    encoders,
                    heads,
                    trained,
                })
            }
        };
        if let Some(extra) = ckpt.tensors.first() {
            return Err(Error::Schema(format!("unexpected tensor {:?}", extra.name)));
        }
        Ok(model)
    }
}

/// Which model family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    #[default]
    Mla,
    Concat,
    Late,
}

/// Trains the chosen model family.
pub fn train_model(
    choice: ModelChoice,
    config: &TrainConfig,
    ds: &MultimodalDataset,
) -> Result<(TrainedModel, Vec<StepRecord>)> {
    Ok(match choice {
        ModelChoice::Mla => {
            let out = crate::altopt::train(config, ds)?;
            (TrainedModel::Mla(out.params), out.history)
        }
        ModelChoice::Concat => {
            let (m, h) = train_concat(config, ds)?;
            (TrainedModel::Concat(m), h)
        }
        ModelChoice::Late => {
            let (m, h) = train_late_fusion(config, ds)?;
            (TrainedModel::Late(m), h)
        }
    })
}

/// Accuracy of modality `m`'s pathway alone over the samples carrying it.
pub fn unimodal_probe(model: &TrainedModel, m: usize, ds: &MultimodalDataset) -> Result<f64> {
    ensure!(model.is_trained(m), "modality {m} was never trained");
    let idx = ds.present_indices(m);
    ensure!(!idx.is_empty(), "no test sample carries modality {m}");
    let (x, y) = ds.gather(m, &idx);
    let logits = model.modality_logits(m, &x)?;
    let pred: Vec<usize> = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
    accuracy(&pred, &y)
}

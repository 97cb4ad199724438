//! Multimodal learning by alternating unimodal adaptation.
//!
//! Each modality trains its own encoder in turn against a single shared linear
//! head. Head gradients are premultiplied by a matrix maintained with recursive
//! least squares so updates for one modality stay clear of feature directions
//! already seen from the others. At inference, per-modality logits are fused
//! with weights given by the softmax of negative prediction entropy.
//!
//! Module map:
//! - [`numkernel`]: dense matrices, softmax, Cholesky test, seeded RNG streams
//! - [`data`]: synthetic latent-factor datasets, missing-modality masks, splits, file format
//! - [`model`]: MLP encoders, shared head, cross-entropy backprop, SGD, checkpoints
//! - [`altopt`]: the alternating training loop and the modification matrix
//! - [`fusion`]: entropy-weighted test-time fusion
//! - [`baselines`]: concatenation and late fusion comparators, unimodal probes
//! - [`eval`]: reports, ablation grid, missing-rate sweeps, modality gap
//! - [`cli`]: configuration, metrics stream and the `mla` command

pub mod altopt;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod numkernel;

pub use error::{Error, Result};

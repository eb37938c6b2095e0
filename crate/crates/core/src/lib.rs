//! Spatio-temporal sparse autoencoders for video feature tensors.
//!
//! The crate is organised around the life cycle of an SAE run:
//!
//! - [`features`]: the `T x P x D` clip tensor model, the STSF/STSE file
//!   formats, batching, and a synthetic AR(1) feature generator.
//! - [`sae`]: parameters, sparse codes and every activation (TopK,
//!   BatchTopK, Matryoshka grouping, sparsemax, entmax-1.5).
//! - [`objectives`]: reconstruction, dead-latent auxiliary, contrastive
//!   pairings with InfoNCE, and the per-variant composite loss.
//! - [`trainer`]: analytic gradients, Adam, decoder normalisation,
//!   checkpoints and the epoch loop.
//! - [`metrics`]: the evaluation battery (R², lag-1 coherence, sparsity,
//!   monosemanticity, action purity, Jaccard uniqueness, linear probe).
//! - [`analysis`]: post-hoc temporal smoothing baselines, causal feature
//!   ablation and ridge-based text/video retrieval.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod features;
pub mod metrics;
pub mod objectives;
mod real;
pub mod rng;
pub mod sae;
pub mod trainer;

pub use error::{Error, Result};
pub use features::{EmbeddingKind, EmbeddingSet, FeatureTensor, SynthConfig};
pub use objectives::{Variant, VariantConfig};
pub use real::Real;
pub use sae::{Activation, SaeConfig, SaeParams, SparseCode};
pub use trainer::{TrainConfig, TrainLog};

//! Analytic gradients, Adam, dead-latent tracking and the epoch loop.

mod adam;
mod checkpoint;
mod log;

pub use adam::{adam_step, renormalize_decoder, AdamConfig, AdamState, NORM_TOLERANCE};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, STSC_MAGIC,
};
pub use log::{TrainLog, TrainRecord, LOG_HEADER};

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{iter_batches, Batch, BatchMode, FeatureTensor};
use crate::objectives::{evaluate, EvalOptions, Gradients, VariantConfig};
use crate::real::Real;
use crate::sae::{EvalTopK, SaeConfig, SaeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant_cfg: VariantConfig,
    pub epochs: usize,
    /// Tokens per batch for the standard variant.
    pub batch_tokens: usize,
    /// Clips per batch for the clip variants.
    pub batch_clips: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    pub frozen_decoder: bool,
    /// A latent counts as dead after this many consecutive batches without
    /// firing.
    pub dead_after_batches: usize,
    pub eval_topk_mode: EvalTopK,
    /// Record wall time in the log. Off gives byte-identical logs across runs.
    pub record_timing: bool,
    /// Where `train` writes the final checkpoint, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant_cfg: VariantConfig::default(),
            epochs: 10,
            batch_tokens: 4096,
            batch_clips: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            frozen_decoder: false,
            dead_after_batches: 200,
            eval_topk_mode: EvalTopK::PerToken,
            record_timing: true,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.variant_cfg.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {} must be > 0", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::InvalidConfig("eps_adam must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_tokens == 0 || self.batch_clips == 0 {
            return Err(Error::InvalidConfig("batch sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    pub fn batch_mode(&self) -> BatchMode {
        if self.variant_cfg.variant.needs_clips() {
            BatchMode::WholeClips(self.batch_clips)
        } else {
            BatchMode::FlatTokens(self.batch_tokens)
        }
    }
}

/// Gradients of the composite loss on `batch`. Works for `f32` training and
/// for `f64` shadow evaluation in gradient checks.
pub fn compute_grads<F: Real>(
    batch: &Batch<F>,
    params: &SaeParams<F>,
    cfg: &VariantConfig,
    dead: Option<&[bool]>,
    frozen_decoder: bool,
) -> Result<Gradients<F>> {
    let eval = evaluate(
        params,
        batch,
        cfg,
        EvalOptions {
            dead,
            want_grads: true,
            frozen_decoder,
        },
    )?;
    Ok(eval.grads.expect("gradients requested"))
}

/// Tracks consecutive batches without firing for every latent.
#[derive(Debug, Clone)]
pub struct DeadTracker {
    idle: Vec<usize>,
    threshold: usize,
}

impl DeadTracker {
    pub fn new(n_latents: usize, threshold: usize) -> Self {
        DeadTracker {
            idle: vec![0; n_latents],
            threshold,
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.idle.iter().map(|&n| n >= self.threshold).collect()
    }

    pub fn n_dead(&self) -> usize {
        self.idle.iter().filter(|&&n| n >= self.threshold).count()
    }

    pub fn observe<F: Real>(&mut self, codes: &[crate::sae::SparseCode<F>]) {
        let mut fired = vec![false; self.idle.len()];
        for code in codes {
            for &(j, v) in &code.active {
                if v != F::zero() {
                    fired[j as usize] = true;
                }
            }
        }
        for (n, f) in self.idle.iter_mut().zip(fired) {
            *n = if f { 0 } else { *n + 1 };
        }
    }
}

/// Seed of the batch order in `epoch`.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains a fresh SAE on `data`. Parameters are initialised from
/// `cfg.seed`; batch order is reshuffled every epoch.
pub fn train(
    data: &FeatureTensor,
    sae: &SaeConfig,
    cfg: &TrainConfig,
) -> Result<(SaeParams, TrainLog)> {
    data.validate()?;
    if data.n_tokens() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let params = SaeParams::init(sae.clone(), &data.mean_token(), cfg.seed)?;
    train_from(data, params, cfg)
}

/// Continues training from `params`.
pub fn train_from(
    data: &FeatureTensor,
    mut params: SaeParams,
    cfg: &TrainConfig,
) -> Result<(SaeParams, TrainLog)> {
    cfg.validate()?;
    params.validate()?;
    if data.dim != params.d_in() {
        return Err(Error::DimensionMismatch {
            what: "feature dim",
            expected: params.d_in(),
            actual: data.dim,
        });
    }
    let adam = cfg.adam();
    let mut state = AdamState::new(&params);
    let mut dead = DeadTracker::new(params.n_latents(), cfg.dead_after_batches);
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        for batch in iter_batches(data, cfg.batch_mode(), epoch_seed(cfg.seed, epoch))? {
            step += 1;
            let mask = dead.mask();
            let eval = evaluate(
                &params,
                &batch,
                &cfg.variant_cfg,
                EvalOptions {
                    dead: Some(&mask),
                    want_grads: true,
                    frozen_decoder: cfg.frozen_decoder,
                },
            )
            .map_err(|e| match e {
                Error::NonFiniteGradient { term } => Error::NonFiniteLoss {
                    step,
                    breakdown: format!("gradient of {term} is not finite"),
                },
                other => other,
            })?;
            if !eval.breakdown.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    breakdown: eval.breakdown.to_string(),
                });
            }
            let grads = eval.grads.as_ref().expect("gradients requested");
            adam_step(&mut params, grads, &mut state, &adam, cfg.frozen_decoder);
            dead.observe(&eval.codes);
            let l0_mean =
                eval.codes.iter().map(|c| c.l0()).sum::<usize>() as f64 / eval.codes.len() as f64;
            log.push(TrainRecord {
                step,
                loss: eval.breakdown,
                l0_mean,
                dead: dead.n_dead(),
                ms_elapsed: if cfg.record_timing {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                },
            })?;
        }
    }
    if let Some(path) = &cfg.checkpoint {
        save_checkpoint(&params, cfg, path)?;
    }
    Ok((params, log))
}

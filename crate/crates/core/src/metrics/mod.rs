//! The evaluation battery: reconstruction, temporal coherence, sparsity,
//! monosemanticity, action purity, feature uniqueness and the linear probe.

mod clips;
mod coherence;
mod probe;
mod recon;

pub use clips::{
    action_purity, jaccard, jaccard_uniqueness, monosemanticity, sparsity_stats, ClipActivations,
};
pub use coherence::{lag1_codes, lag1_pearson, lag1_raw, Lag1Mode, Lag1Stats, MIN_SERIES_VARIANCE};
pub use probe::{
    pool_codes, stratified_split, train_probe, FeatureSpace, ProbeConfig, ProbeModel,
};
pub use recon::r_squared;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{EmbeddingKind, EmbeddingSet, FeatureTensor};
use crate::sae::{decode, SaeParams, SparseCode};

/// Everything the battery reads. `codes` holds one code per token, clip
/// major, then frame, then patch.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub features: &'a FeatureTensor,
    pub codes: &'a [SparseCode],
    pub params: &'a SaeParams,
    pub sim_embeddings: Option<&'a EmbeddingSet>,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        features: &'a FeatureTensor,
        codes: &'a [SparseCode],
        params: &'a SaeParams,
        sim_embeddings: Option<&'a EmbeddingSet>,
    ) -> Result<Self> {
        if features.dim != params.d_in() {
            return Err(Error::DimensionMismatch {
                what: "feature dim",
                expected: params.d_in(),
                actual: features.dim,
            });
        }
        if codes.len() != features.n_tokens() {
            return Err(Error::DimensionMismatch {
                what: "code count",
                expected: features.n_tokens(),
                actual: codes.len(),
            });
        }
        if let Some(e) = sim_embeddings {
            if e.kind != EmbeddingKind::PerClip || e.count != features.n_clips {
                return Err(Error::DimensionMismatch {
                    what: "per-clip similarity embeddings",
                    expected: features.n_clips,
                    actual: e.count,
                });
            }
        }
        Ok(EvalContext {
            features,
            codes,
            params,
            sim_embeddings,
        })
    }

    /// Decoded tokens, `[n_tokens, D]`.
    pub fn reconstruction(&self) -> Result<Vec<f32>> {
        reconstruct(self.codes, self.params)
    }
}

pub fn reconstruct(codes: &[SparseCode], params: &SaeParams) -> Result<Vec<f32>> {
    let parts: Vec<Vec<f32>> = codes
        .par_chunks(256)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len() * params.d_in());
            for c in chunk {
                out.extend(decode(c, params)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub lag1_mode: Lag1Mode,
    pub ms_top_m: usize,
    pub purity_top_m: usize,
    pub purity_top_n: usize,
    pub jaccard_top_m: usize,
    pub jaccard_pairs: usize,
    pub seed: u64,
    pub run_probe: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            lag1_mode: Lag1Mode::FramePooled,
            ms_top_m: 16,
            purity_top_m: 8,
            purity_top_n: 50,
            jaccard_top_m: 16,
            jaccard_pairs: 10_000,
            seed: 0,
            run_probe: true,
        }
    }
}

/// Metrics that cannot be computed on a given dataset (no labels, no
/// similarity embeddings, too few frames) are reported as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: f64,
    pub r2_pooled: Option<f64>,
    pub lag1_mean: Option<f64>,
    pub lag1_frac_below_03: Option<f64>,
    pub l0_mean: f64,
    pub dead_fraction: f64,
    pub ms: Option<f64>,
    pub purity_mean: Option<f64>,
    pub jaccard_mean: Option<f64>,
    pub probe_top1: Option<f64>,
    pub raw_lag1_mean: Option<f64>,
    pub raw_probe_top1: Option<f64>,
    pub high_probe_top1: Option<f64>,
    pub config_echo: serde_json::Value,
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_) | Error::Missing(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn report(
    ctx: &EvalContext<'_>,
    opts: &ReportOptions,
    config_echo: serde_json::Value,
) -> Result<MetricsReport> {
    let f = ctx.features;
    let h = ctx.params.n_latents();
    let per_clip = f.tokens_per_clip();
    let x_hat = ctx.reconstruction()?;
    let r2 = r_squared(&f.data, &x_hat, f.dim, None)?;
    let r2_pooled = optional(r_squared(&f.data, &x_hat, f.dim, Some(per_clip)))?;

    let lag1 = if f.frames >= 3 {
        optional(lag1_codes(ctx.codes, f.n_clips, f.frames, f.patches, opts.lag1_mode))?
    } else {
        None
    };
    let raw_lag1 = if f.frames >= 3 {
        optional(lag1_raw(f, opts.lag1_mode))?
    } else {
        None
    };
    let (l0_mean, dead_fraction) = sparsity_stats(ctx.codes, h);
    let acts = ClipActivations::new(ctx.codes, per_clip, h)?;
    let ms = match ctx.sim_embeddings {
        Some(e) => optional(monosemanticity(&acts, e, opts.ms_top_m))?,
        None => None,
    };
    let purity_mean = match &f.labels {
        Some(labels) => optional(
            action_purity(&acts, labels, opts.purity_top_m, opts.purity_top_n).map(|p| p.0),
        )?,
        None => None,
    };
    let jaccard_mean = optional(jaccard_uniqueness(
        &acts,
        opts.jaccard_top_m,
        opts.jaccard_pairs,
        opts.seed,
    ))?;

    let (mut probe_top1, mut raw_probe_top1, mut high_probe_top1) = (None, None, None);
    if let (true, Some(labels)) = (opts.run_probe, &f.labels) {
        let cfg = ProbeConfig::default();
        let pooled = pool_codes(ctx.codes, per_clip, h, None)?;
        probe_top1 =
            probe_or_none(&pooled, h, labels, FeatureSpace::SaePooled, opts.seed, &cfg)?;
        raw_probe_top1 =
            probe_or_none(&f.pooled(), f.dim, labels, FeatureSpace::RawPooled, opts.seed, &cfg)?;
        if let Some(m) = ctx.params.config.matryoshka_split {
            let high = pool_codes(ctx.codes, per_clip, h, Some(m))?;
            high_probe_top1 =
                probe_or_none(&high, m, labels, FeatureSpace::SaeHighGroup, opts.seed, &cfg)?;
        }
    }

    Ok(MetricsReport {
        r2,
        r2_pooled,
        lag1_mean: lag1.map(|s| s.mean),
        lag1_frac_below_03: lag1.map(|s| s.frac_below_03),
        l0_mean,
        dead_fraction,
        ms,
        purity_mean,
        jaccard_mean,
        probe_top1,
        raw_lag1_mean: raw_lag1.map(|s| s.mean),
        raw_probe_top1,
        high_probe_top1,
        config_echo,
    })
}

fn probe_or_none(
    x: &[f32],
    nf: usize,
    labels: &[u32],
    space: FeatureSpace,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<Option<f64>> {
    match train_probe(x, nf, labels, space, seed, cfg) {
        Ok((_, acc)) => Ok(Some(acc)),
        Err(Error::InvalidArgument(_) | Error::Missing(_) | Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

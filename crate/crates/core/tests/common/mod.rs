//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stsae_core::features::{Batch, BatchLayout};
use stsae_core::objectives::{evaluate, EvalOptions, Gradients};
use stsae_core::sae::{Activation, SaeConfig, SaeParams, SparseCode};
use stsae_core::trainer::compute_grads;
use stsae_core::{Variant, VariantConfig};

pub const D: usize = 4;
pub const H: usize = 8;
pub const K: usize = 2;
pub const T: usize = 3;
pub const P: usize = 2;
pub const STEP: f64 = 1e-4;

pub fn setup(activation: Activation, split: Option<usize>, seed: u64) -> (SaeParams<f64>, Batch<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SaeConfig {
        d_in: D,
        n_latents: H,
        k: K,
        activation,
        matryoshka_split: split,
    };
    let mut p: SaeParams<f64> = SaeParams::<f32>::init(cfg, &[0.0; D], seed).unwrap().cast();
    for v in p.w_enc.iter_mut().chain(p.atoms.iter_mut()) {
        *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    for v in p.b_enc.iter_mut().chain(p.b_pre.iter_mut()) {
        *v = 0.2 * rng.sample::<f64, _>(StandardNormal);
    }
    let n_clips = 2;
    let data: Vec<f64> = (0..n_clips * T * P * D).map(|_| rng.sample(StandardNormal)).collect();
    let batch = Batch {
        data,
        n_tokens: n_clips * T * P,
        dim: D,
        layout: BatchLayout::Clips {
            n_clips,
            frames: T,
            patches: P,
        },
    };
    (p, batch)
}

fn support(codes: &[SparseCode<f64>]) -> Vec<Vec<u32>> {
    codes.iter().map(|c| c.active.iter().map(|a| a.0).collect()).collect()
}

fn slots(g: &mut Gradients<f64>) -> [&mut Vec<f64>; 4] {
    [&mut g.w_enc, &mut g.b_enc, &mut g.b_pre, &mut g.atoms]
}

fn param_slots(p: &mut SaeParams<f64>) -> [&mut Vec<f64>; 4] {
    [&mut p.w_enc, &mut p.b_enc, &mut p.b_pre, &mut p.atoms]
}

/// Returns (max relative error, coordinates checked, coordinates skipped
/// because the active set changed under the perturbation).
pub fn check(
    params: &SaeParams<f64>,
    batch: &Batch<f64>,
    cfg: &VariantConfig,
    dead: Option<&[bool]>,
    frozen: bool,
) -> (f64, usize, usize) {
    let opts = EvalOptions {
        dead,
        want_grads: false,
        frozen_decoder: frozen,
    };
    let base = evaluate(params, batch, cfg, opts).unwrap();
    let base_support = support(&base.codes);
    let mut grads = compute_grads(batch, params, cfg, dead, frozen).unwrap();
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    let analytic = slots(&mut grads);
    for (slot, analytic) in analytic.into_iter().enumerate() {
        if frozen && slot == 3 {
            assert!(analytic.iter().all(|&g| g == 0.0));
            continue;
        }
        for i in 0..analytic.len() {
            let mut plus = params.clone();
            param_slots(&mut plus)[slot][i] += STEP;
            let mut minus = params.clone();
            param_slots(&mut minus)[slot][i] -= STEP;
            let ep = evaluate(&plus, batch, cfg, opts).unwrap();
            let em = evaluate(&minus, batch, cfg, opts).unwrap();
            if support(&ep.codes) != base_support || support(&em.codes) != base_support {
                skipped += 1;
                continue;
            }
            let numeric = (ep.breakdown.total - em.breakdown.total) / (2.0 * STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked, skipped)
}

pub fn variants() -> Vec<VariantConfig> {
    [Variant::Standard, Variant::Temporal, Variant::Separate, Variant::Raster]
        .into_iter()
        .map(|v| VariantConfig {
            frame_width: Some(2),
            lambda_t: 0.5,
            lambda_s: 0.4,
            lambda_r: 0.3,
            alpha_aux: 0.5,
            alpha_mat: 0.7,
            ..VariantConfig::of(v)
        })
        .collect()
}


/// The AR(1) clips used for the coherence experiments: 200 clips of
/// 8 x 16 x 32, rho = 0.8, 4 classes.
pub fn coherence_data(seed: u64) -> stsae_core::FeatureTensor {
    stsae_core::features::synth_clips(&stsae_core::SynthConfig {
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Noiseless planted dictionary small enough for an H = 256 model.
pub fn easy_data(seed: u64) -> stsae_core::FeatureTensor {
    stsae_core::features::synth_clips(&stsae_core::SynthConfig {
        true_dict_size: 32,
        k_true: 4,
        noise_std: 0.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Desk-scale training schedule: 10 epochs, 256-token or 2-clip batches.
pub fn desk_train(variant: Variant, seed: u64) -> stsae_core::TrainConfig {
    stsae_core::TrainConfig {
        variant_cfg: VariantConfig::of(variant),
        epochs: 10,
        batch_tokens: 256,
        batch_clips: 2,
        seed,
        record_timing: false,
        ..Default::default()
    }
}

/// Dense EMA computed directly from the recurrence, in f64.
pub fn ema_oracle(codes: &[SparseCode], frames: usize, patches: usize, alpha: f64) -> Vec<f64> {
    let h = codes[0].n_latents;
    let mut out = vec![0.0f64; frames * patches * h];
    for t in 0..frames {
        for p in 0..patches {
            for j in 0..h {
                let z = codes[t * patches + p].get(j as u32) as f64;
                let i = (t * patches + p) * h + j;
                out[i] = if t == 0 {
                    z
                } else {
                    alpha * z + (1.0 - alpha) * out[i - patches * h]
                };
            }
        }
    }
    out
}

/// Pearson correlation of two equal-length series, `None` when either is
/// constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 1e-12 && sbb > 1e-12).then(|| sab / (saa * sbb).sqrt())
}

//! Analytic gradients against central finite differences in f64.

mod common;

use common::{check, setup, variants};
use stsae_core::features::Batch;
use stsae_core::objectives::{evaluate, EvalOptions};
use stsae_core::sae::{Activation, SaeConfig, SaeParams};
use stsae_core::trainer::compute_grads;
use stsae_core::{Variant, VariantConfig};

fn run(activation: Activation, split: Option<usize>) {
    let dead = [false, true, false, true, true, false, false, true];
    for cfg in variants() {
        for seed in 0..3 {
            let (p, b) = setup(activation, split, seed);
            for mask in [None, Some(&dead[..])] {
                let opts = EvalOptions {
                    dead: mask,
                    ..Default::default()
                };
                let l = evaluate(&p, &b, &cfg, opts).unwrap().breakdown;
                assert_eq!(l.aux > 0.0, mask.is_some());
                assert_eq!(l.mat > 0.0, split.is_some());
                assert_eq!(l.temp > 0.0, matches!(cfg.variant, Variant::Temporal | Variant::Separate));
                assert_eq!(l.spat > 0.0, cfg.variant == Variant::Separate);
                assert_eq!(l.raster > 0.0, cfg.variant == Variant::Raster);
                let (err, checked, skipped) = check(&p, &b, &cfg, mask, false);
                assert!(
                    err < 1e-4,
                    "{:?} {activation:?} split {split:?} seed {seed}: rel err {err}",
                    cfg.variant
                );
                assert!(checked > 4 * skipped, "too many skipped: {checked} vs {skipped}");
            }
        }
    }
}

#[test]
fn topk_gradients() {
    run(Activation::TopK, None);
}

#[test]
fn batch_topk_gradients() {
    run(Activation::BatchTopK, None);
}

#[test]
fn matryoshka_gradients() {
    run(Activation::BatchTopK, Some(3));
}

#[test]
fn sparsemax_gradients() {
    run(Activation::Sparsemax { temperature: 0.7 }, None);
}

#[test]
fn entmax_gradients() {
    run(Activation::Entmax15 { temperature: 0.7 }, None);
}

#[test]
fn frozen_decoder_has_zero_decoder_gradient() {
    let (p, b) = setup(Activation::TopK, None, 5);
    let cfg = &variants()[1];
    let (err, _, _) = check(&p, &b, cfg, None, true);
    assert!(err < 1e-4);
}

#[test]
fn zero_residual_gives_zero_gradient() {
    // identity-like model that reconstructs its input exactly
    let cfg = SaeConfig::topk(2, 2, 2);
    let mut p = SaeParams::<f64>::zeros(cfg);
    p.w_enc = vec![1.0, 0.0, 0.0, 1.0];
    p.atoms = p.w_enc.clone();
    let b = Batch::flat(vec![1.0, 2.0, 0.5, 0.25], 2);
    let vc = VariantConfig::default();
    let g = compute_grads(&b, &p, &vc, Some(&[false, false]), false).unwrap();
    assert_eq!(g.max_abs(), 0.0);
}

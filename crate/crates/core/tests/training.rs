//! Training loop behaviour: determinism, seeds, checkpoints and logs.

mod common;

use stsae_core::features::synth_clips;
use stsae_core::trainer::{checkpoint_to_bytes, train, train_from, TrainConfig, LOG_HEADER};
use stsae_core::{FeatureTensor, SaeConfig, SynthConfig, Variant};

fn small() -> FeatureTensor {
    synth_clips(&SynthConfig {
        n_clips: 16,
        frames: 4,
        patches: 4,
        dim: 8,
        seed: 4,
        ..Default::default()
    })
    .unwrap()
}

fn cfg(variant: Variant, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_tokens: 32,
        batch_clips: 2,
        ..common::desk_train(variant, seed)
    }
}

#[test]
fn seeds_change_the_run() {
    let data = small();
    let sae = SaeConfig::topk(8, 32, 4);
    let (a, _) = train(&data, &sae, &cfg(Variant::Temporal, 1)).unwrap();
    let (b, _) = train(&data, &sae, &cfg(Variant::Temporal, 2)).unwrap();
    assert_ne!(
        checkpoint_to_bytes(&a, &cfg(Variant::Temporal, 1)).unwrap(),
        checkpoint_to_bytes(&b, &cfg(Variant::Temporal, 1)).unwrap()
    );
}

#[test]
fn log_has_one_row_per_step() {
    let data = small();
    let sae = SaeConfig::topk(8, 32, 4);
    let c = cfg(Variant::Separate, 0);
    let (_, log) = train(&data, &sae, &c).unwrap();
    // 16 clips in batches of 2, 3 epochs
    assert_eq!(log.len(), 24);
    let csv = log.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), LOG_HEADER.split(',').count());
        assert_eq!(cols[0], (i + 1).to_string());
        assert_eq!(*cols.last().unwrap(), "0.000", "timing disabled");
    }
    let flat = cfg(Variant::Standard, 0);
    let (_, log) = train(&data, &sae, &flat).unwrap();
    // 256 tokens in batches of 32
    assert_eq!(log.len(), 3 * 8);
}

#[test]
fn loss_falls_on_planted_data() {
    let data = common::easy_data(1);
    let sae = SaeConfig::topk(32, 128, 8);
    let c = TrainConfig {
        epochs: 4,
        ..common::desk_train(Variant::Standard, 1)
    };
    let (_, log) = train(&data, &sae, &c).unwrap();
    let per_epoch = log.len() / 4;
    let means = log.epoch_means(per_epoch);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn continuing_matches_a_longer_run_step_count() {
    let data = small();
    let sae = SaeConfig::topk(8, 32, 4);
    let c = cfg(Variant::Raster, 3);
    let (p, log) = train(&data, &sae, &c).unwrap();
    let (p2, log2) = train_from(&data, p.clone(), &c).unwrap();
    assert_eq!(log2.len(), log.len());
    assert_ne!(p2.w_enc, p.w_enc);
    assert!(p2.max_column_norm_error() < 1e-5);
}

#[test]
fn mismatched_dim_is_rejected() {
    let data = small();
    let sae = SaeConfig::topk(16, 32, 4);
    assert!(train(&data, &sae, &cfg(Variant::Standard, 0)).is_err());
}

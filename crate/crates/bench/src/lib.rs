//! Benchmark fixtures shared by the criterion targets.

use stsae_core::features::{synth_clips, Batch};
use stsae_core::{FeatureTensor, SaeConfig, SaeParams, SynthConfig};

/// Synthetic clips and a freshly initialised model of matching width.
pub fn fixture(n_clips: usize, n_latents: usize, k: usize) -> (FeatureTensor, SaeParams) {
    let data = synth_clips(&SynthConfig {
        n_clips,
        ..SynthConfig::default()
    })
    .expect("valid synth config");
    let cfg = SaeConfig::topk(data.dim, n_latents, k);
    let params = SaeParams::init(cfg, &data.mean_token(), 0).expect("valid model");
    (data, params)
}

/// The first `n_clips` clips as one clip-structured batch.
pub fn clip_batch(data: &FeatureTensor, n_clips: usize) -> Batch {
    let idx: Vec<usize> = (0..n_clips.min(data.n_clips)).collect();
    Batch::from_clips(&data.select_clips(&idx))
}

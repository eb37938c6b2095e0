//! Seeded random number helpers.
//!
//! Every stochastic step goes through ChaCha8 so that streams are stable
//! across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Deterministic generator for `seed`, split into an independent stream per
/// `purpose` so that unrelated consumers never share draws.
pub fn stream(seed: u64, purpose: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub mod purpose {
    pub const SYNTH: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const PROBE_INIT: u64 = 5;
    pub const JACCARD: u64 = 6;
    pub const ABLATION: u64 = 7;
    pub const CV_FOLDS: u64 = 8;
}

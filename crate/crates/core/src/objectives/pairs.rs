//! Contrastive pairings over a clip's `(T, P)` token grid. Token ids are
//! `t * P + p` within a clip and `clip * T * P + t * P + p` within a batch.

use crate::error::{Error, Result};

/// Anchor/positive token pairs plus the candidate set every anchor is scored
/// against: all positive targets, deduplicated and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
    pub candidates: Vec<usize>,
}

impl PairSet {
    pub fn from_pairs(pairs: Vec<(usize, usize)>) -> Self {
        let mut candidates: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
        candidates.sort_unstable();
        candidates.dedup();
        PairSet { pairs, candidates }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Repeats a per-clip pairing for `n_clips` clips of `tokens_per_clip`
    /// tokens each, with one shared candidate set.
    pub fn tile(&self, n_clips: usize, tokens_per_clip: usize) -> PairSet {
        let pairs = (0..n_clips)
            .flat_map(|c| {
                let off = c * tokens_per_clip;
                self.pairs.iter().map(move |&(a, p)| (a + off, p + off))
            })
            .collect();
        PairSet::from_pairs(pairs)
    }
}

/// Same patch, consecutive frames: `(T-1) * P` pairs.
pub fn temporal_pairs(frames: usize, patches: usize) -> Result<PairSet> {
    if frames < 2 {
        return Err(Error::invalid(format!("temporal pairs need T >= 2, got {frames}")));
    }
    let pairs = (0..frames - 1)
        .flat_map(|t| (0..patches).map(move |p| (t * patches + p, (t + 1) * patches + p)))
        .collect();
    Ok(PairSet::from_pairs(pairs))
}

/// Horizontally adjacent patches within each frame: `T * (P/W) * (W-1)` pairs.
pub fn spatial_pairs(frames: usize, patches: usize, width: usize) -> Result<PairSet> {
    if width == 0 || !patches.is_multiple_of(width) {
        return Err(Error::invalid(format!(
            "{patches} patches not divisible by frame width {width}"
        )));
    }
    let rows = patches / width;
    let mut pairs = Vec::with_capacity(frames * rows * width.saturating_sub(1));
    for t in 0..frames {
        for r in 0..rows {
            for c in 0..width.saturating_sub(1) {
                let s = t * patches + r * width + c;
                pairs.push((s, s + 1));
            }
        }
    }
    Ok(PairSet::from_pairs(pairs))
}

/// Consecutive elements of the raster serialisation `s = t * P + p`,
/// including row wraps and frame boundaries: `T * P - 1` pairs.
pub fn raster_pairs(frames: usize, patches: usize) -> PairSet {
    let n = frames * patches;
    PairSet::from_pairs((1..n).map(|s| (s - 1, s)).collect())
}

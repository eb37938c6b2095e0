use rand::seq::SliceRandom;

use super::FeatureTensor;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Shuffled individual tokens, `batch_tokens` per batch.
    FlatTokens(usize),
    /// Shuffled whole clips, `batch_clips` per batch.
    WholeClips(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchLayout {
    Flat,
    Clips {
        n_clips: usize,
        frames: usize,
        patches: usize,
    },
}

/// A token matrix `[n_tokens, dim]`. In clip layout tokens are ordered clip,
/// frame, patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F = f32> {
    pub data: Vec<F>,
    pub n_tokens: usize,
    pub dim: usize,
    pub layout: BatchLayout,
}

impl<F: Real> Batch<F> {
    pub fn flat(data: Vec<F>, dim: usize) -> Self {
        Batch {
            n_tokens: data.len() / dim,
            data,
            dim,
            layout: BatchLayout::Flat,
        }
    }

    /// Every clip of `tensor` as one clip-layout batch.
    pub fn from_clips(tensor: &FeatureTensor) -> Self {
        Batch {
            data: tensor.data.iter().map(|&v| F::of(v as f64)).collect(),
            n_tokens: tensor.n_tokens(),
            dim: tensor.dim,
            layout: BatchLayout::Clips {
                n_clips: tensor.n_clips,
                frames: tensor.frames,
                patches: tensor.patches,
            },
        }
    }

    pub fn token(&self, i: usize) -> &[F] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cast<G: Real>(&self) -> Batch<G> {
        Batch {
            data: self.data.iter().map(|v| G::of(v.to_f64_lossy())).collect(),
            n_tokens: self.n_tokens,
            dim: self.dim,
            layout: self.layout,
        }
    }
}

pub struct BatchIter<'a> {
    tensor: &'a FeatureTensor,
    mode: BatchMode,
    order: Vec<usize>,
    pos: usize,
}

/// Shuffled batches covering every token (or clip) exactly once.
pub fn iter_batches(tensor: &FeatureTensor, mode: BatchMode, seed: u64) -> Result<BatchIter<'_>> {
    let units = match mode {
        BatchMode::FlatTokens(0) | BatchMode::WholeClips(0) => {
            return Err(Error::invalid("batch size must be at least 1"))
        }
        BatchMode::FlatTokens(_) => tensor.n_tokens(),
        BatchMode::WholeClips(_) => tensor.n_clips,
    };
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(&mut stream(seed, purpose::BATCHES));
    Ok(BatchIter {
        tensor,
        mode,
        order,
        pos: 0,
    })
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let t = self.tensor;
        let size = match self.mode {
            BatchMode::FlatTokens(n) | BatchMode::WholeClips(n) => n,
        };
        let end = (self.pos + size).min(self.order.len());
        let chunk = &self.order[self.pos..end];
        self.pos = end;
        Some(match self.mode {
            BatchMode::FlatTokens(_) => {
                let mut data = Vec::with_capacity(chunk.len() * t.dim);
                for &i in chunk {
                    data.extend_from_slice(&t.data[i * t.dim..(i + 1) * t.dim]);
                }
                Batch::flat(data, t.dim)
            }
            BatchMode::WholeClips(_) => {
                let mut data = Vec::with_capacity(chunk.len() * t.tokens_per_clip() * t.dim);
                for &c in chunk {
                    data.extend_from_slice(t.clip(c));
                }
                Batch {
                    data,
                    n_tokens: chunk.len() * t.tokens_per_clip(),
                    dim: t.dim,
                    layout: BatchLayout::Clips {
                        n_clips: chunk.len(),
                        frames: t.frames,
                        patches: t.patches,
                    },
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n_clips: usize, frames: usize, patches: usize, dim: usize) -> FeatureTensor {
        let n = n_clips * frames * patches * dim;
        FeatureTensor::new(
            n_clips,
            frames,
            patches,
            dim,
            (0..n).map(|i| i as f32).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn clip_batches_count() {
        let t = ramp(10, 2, 2, 1);
        let sizes: Vec<_> = iter_batches(&t, BatchMode::WholeClips(8), 0)
            .unwrap()
            .map(|b| match b.layout {
                BatchLayout::Clips { n_clips, .. } => n_clips,
                BatchLayout::Flat => unreachable!(),
            })
            .collect();
        assert_eq!(sizes, vec![8, 2]);
    }

    #[test]
    fn flat_single_batch() {
        let t = ramp(1, 2, 3, 2);
        let batches: Vec<_> = iter_batches(&t, BatchMode::FlatTokens(6), 0).unwrap().collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].n_tokens, 6);
    }

    #[test]
    fn oversized_batch_is_single_smaller_batch() {
        let t = ramp(3, 1, 1, 1);
        let batches: Vec<_> = iter_batches(&t, BatchMode::WholeClips(50), 0).unwrap().collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].n_tokens, 3);
    }

    #[test]
    fn zero_batch_rejected() {
        let t = ramp(3, 1, 1, 1);
        assert!(iter_batches(&t, BatchMode::FlatTokens(0), 0).is_err());
    }

    #[test]
    fn every_token_once_and_deterministic() {
        let t = ramp(4, 3, 2, 1);
        let run = |seed| -> Vec<f32> {
            iter_batches(&t, BatchMode::FlatTokens(5), seed)
                .unwrap()
                .flat_map(|b| b.data)
                .collect()
        };
        let a = run(9);
        assert_eq!(a, run(9));
        let mut sorted = a.clone();
        sorted.sort_by(f32::total_cmp);
        assert_eq!(sorted, t.data);
        assert_ne!(a, t.data, "order should be shuffled");
    }

    #[test]
    fn clip_batches_keep_structure() {
        let t = ramp(5, 2, 3, 2);
        for b in iter_batches(&t, BatchMode::WholeClips(2), 1).unwrap() {
            for clip in b.data.chunks_exact(12) {
                let c = (clip[0] as usize) / 12;
                assert_eq!(clip, t.clip(c));
            }
        }
    }
}

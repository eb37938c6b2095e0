//! Feature tensors, embedding sets and their on-disk formats.

mod batch;
pub(crate) mod format;
mod synth;

pub use batch::{iter_batches, Batch, BatchIter, BatchLayout, BatchMode};
pub use format::{
    embeddings_from_bytes, embeddings_to_bytes, features_from_bytes, features_to_bytes,
    read_embeddings, read_features, write_atomic, write_embeddings, write_features,
    STSE_HEADER_LEN, STSF_HEADER_LEN,
};
pub use synth::{synth_clips, synth_clips_with_dictionary, SynthConfig};

use crate::error::{Error, Result};

/// A dataset of clips, each a `frames x patches x dim` block of backbone
/// activations stored clip-major, then frame, then patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub n_clips: usize,
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub labels: Option<Vec<u32>>,
}

impl FeatureTensor {
    pub fn new(
        n_clips: usize,
        frames: usize,
        patches: usize,
        dim: usize,
        data: Vec<f32>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let t = FeatureTensor {
            n_clips,
            frames,
            patches,
            dim,
            data,
            labels,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn zeros(n_clips: usize, frames: usize, patches: usize, dim: usize) -> Self {
        FeatureTensor {
            n_clips,
            frames,
            patches,
            dim,
            data: vec![0.0; n_clips * frames * patches * dim],
            labels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.n_clips * self.frames * self.patches * self.dim;
        if self.data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature payload",
                expected,
                actual: self.data.len(),
            });
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.n_clips {
                return Err(Error::DimensionMismatch {
                    what: "labels",
                    expected: self.n_clips,
                    actual: labels.len(),
                });
            }
        }
        Ok(())
    }

    pub fn tokens_per_clip(&self) -> usize {
        self.frames * self.patches
    }

    pub fn n_tokens(&self) -> usize {
        self.n_clips * self.tokens_per_clip()
    }

    /// Number of classes implied by the labels (`max + 1`), zero if unlabeled.
    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m as usize + 1)
    }

    pub fn clip(&self, c: usize) -> &[f32] {
        let n = self.tokens_per_clip() * self.dim;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn token(&self, c: usize, t: usize, p: usize) -> &[f32] {
        let i = (c * self.frames + t) * self.patches + p;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean token over the whole dataset.
    pub fn mean_token(&self) -> Vec<f64> {
        let mut mean = vec![0.0f64; self.dim];
        for tok in self.data.chunks_exact(self.dim) {
            for (m, &v) in mean.iter_mut().zip(tok) {
                *m += v as f64;
            }
        }
        let n = self.n_tokens().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Mean of every clip over its `frames * patches` tokens, `[n_clips, dim]`.
    pub fn pooled(&self) -> Vec<f32> {
        let per = self.tokens_per_clip();
        let mut out = Vec::with_capacity(self.n_clips * self.dim);
        for c in 0..self.n_clips {
            let mut acc = vec![0.0f64; self.dim];
            for tok in self.clip(c).chunks_exact(self.dim) {
                for (a, &v) in acc.iter_mut().zip(tok) {
                    *a += v as f64;
                }
            }
            out.extend(acc.iter().map(|a| (a / per as f64) as f32));
        }
        out
    }

    /// Subset of clips, in the given order.
    pub fn select_clips(&self, clips: &[usize]) -> FeatureTensor {
        let mut data = Vec::with_capacity(clips.len() * self.tokens_per_clip() * self.dim);
        for &c in clips {
            data.extend_from_slice(self.clip(c));
        }
        FeatureTensor {
            n_clips: clips.len(),
            frames: self.frames,
            patches: self.patches,
            dim: self.dim,
            data,
            labels: self
                .labels
                .as_ref()
                .map(|l| clips.iter().map(|&c| l[c]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    PerClip,
    PerClass,
}

/// Rows of similarity-backbone or text embeddings, one per clip or class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub count: usize,
    pub data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(kind: EmbeddingKind, dim: usize, count: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != dim * count {
            return Err(Error::DimensionMismatch {
                what: "embedding payload",
                expected: dim * count,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(EmbeddingSet {
            kind,
            dim,
            count,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Checks this set against its companion feature tensor.
    pub fn check_against(&self, features: &FeatureTensor) -> Result<()> {
        let expected = match self.kind {
            EmbeddingKind::PerClip => features.n_clips,
            EmbeddingKind::PerClass => features.n_classes(),
        };
        let ok = match self.kind {
            EmbeddingKind::PerClip => self.count == expected,
            EmbeddingKind::PerClass => self.count >= expected,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what: "embedding count",
                expected,
                actual: self.count,
            })
        }
    }
}

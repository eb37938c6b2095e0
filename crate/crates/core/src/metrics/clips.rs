use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::EmbeddingSet;
use crate::rng::{purpose, stream};
use crate::sae::SparseCode;

/// Mean active count per token and the fraction of latents never active.
pub fn sparsity_stats(codes: &[SparseCode], n_latents: usize) -> (f64, f64) {
    if codes.is_empty() || n_latents == 0 {
        return (0.0, 1.0);
    }
    let mut alive = vec![false; n_latents];
    let mut total = 0usize;
    for c in codes {
        for &(j, v) in &c.active {
            if v != 0.0 {
                alive[j as usize] = true;
                total += 1;
            }
        }
    }
    let dead = alive.iter().filter(|a| !**a).count();
    (total as f64 / codes.len() as f64, dead as f64 / n_latents as f64)
}

/// Per-feature clip activations: the max over a clip's tokens of each
/// latent, kept only where positive.
#[derive(Debug, Clone)]
pub struct ClipActivations {
    pub n_clips: usize,
    /// `per_feature[h]` lists `(clip, activation)` sorted by activation
    /// descending, ties by clip index.
    pub per_feature: Vec<Vec<(u32, f64)>>,
    /// Sum of every activation value of each latent over all tokens.
    pub mass: Vec<f64>,
}

impl ClipActivations {
    pub fn new(codes: &[SparseCode], tokens_per_clip: usize, n_latents: usize) -> Result<Self> {
        if tokens_per_clip == 0 || codes.len() % tokens_per_clip != 0 {
            return Err(Error::invalid("codes do not split into whole clips"));
        }
        let n_clips = codes.len() / tokens_per_clip;
        let mut per_feature: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_latents];
        let mut mass = vec![0.0; n_latents];
        let mut clip_max = vec![0.0f64; n_latents];
        let mut touched = Vec::new();
        for (c, clip) in codes.chunks_exact(tokens_per_clip).enumerate() {
            for code in clip {
                for &(j, v) in &code.active {
                    let (j, v) = (j as usize, v as f64);
                    mass[j] += v;
                    if v > clip_max[j] {
                        if clip_max[j] == 0.0 {
                            touched.push(j);
                        }
                        clip_max[j] = v;
                    }
                }
            }
            for &j in &touched {
                per_feature[j].push((c as u32, clip_max[j]));
                clip_max[j] = 0.0;
            }
            touched.clear();
        }
        for list in &mut per_feature {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        Ok(ClipActivations {
            n_clips,
            per_feature,
            mass,
        })
    }

    pub fn n_latents(&self) -> usize {
        self.per_feature.len()
    }

    pub fn top(&self, h: usize, m: usize) -> &[(u32, f64)] {
        let list = &self.per_feature[h];
        &list[..list.len().min(m)]
    }
}

fn unit_rows(emb: &EmbeddingSet) -> Vec<Vec<f64>> {
    (0..emb.count)
        .map(|i| {
            let row: Vec<f64> = emb.row(i).iter().map(|&v| v as f64).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect()
}

/// Activation-weighted mean pairwise cosine of each feature's top clips
/// under an external similarity embedding, averaged over features that fire
/// on at least two clips.
pub fn monosemanticity(acts: &ClipActivations, emb: &EmbeddingSet, top_m: usize) -> Result<f64> {
    if emb.count != acts.n_clips {
        return Err(Error::DimensionMismatch {
            what: "similarity embeddings",
            expected: acts.n_clips,
            actual: emb.count,
        });
    }
    let unit = unit_rows(emb);
    let mut sum = 0.0;
    let mut n = 0usize;
    for h in 0..acts.n_latents() {
        if let Some(ms) = feature_ms(acts.top(h, top_m), &unit) {
            sum += ms;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("no feature fires on two or more clips".into()));
    }
    Ok(sum / n as f64)
}

fn feature_ms(top: &[(u32, f64)], unit: &[Vec<f64>]) -> Option<f64> {
    if top.len() < 2 {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &(a, wa)) in top.iter().enumerate() {
        for &(b, wb) in &top[i + 1..] {
            let cos: f64 = unit[a as usize]
                .iter()
                .zip(&unit[b as usize])
                .map(|(x, y)| x * y)
                .sum();
            num += wa * wb * cos;
            den += wa * wb;
        }
    }
    (den > 0.0).then(|| (num / den).clamp(-1.0, 1.0))
}

/// Purity of every feature (share of its top clips carrying the most common
/// label, over `top_m`) and the mean over the `top_n` features with the
/// largest activation mass.
pub fn action_purity(
    acts: &ClipActivations,
    labels: &[u32],
    top_m: usize,
    top_n: usize,
) -> Result<(f64, Vec<f64>)> {
    if labels.len() != acts.n_clips {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: acts.n_clips,
            actual: labels.len(),
        });
    }
    if top_m == 0 {
        return Err(Error::invalid("top_m must be >= 1"));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let per_feature: Vec<f64> = (0..acts.n_latents())
        .map(|h| {
            let mut counts = vec![0usize; n_classes];
            for &(c, _) in acts.top(h, top_m) {
                counts[labels[c as usize] as usize] += 1;
            }
            counts.into_iter().max().unwrap_or(0) as f64 / top_m as f64
        })
        .collect();
    let mut ranked: Vec<usize> = (0..acts.n_latents()).filter(|&h| acts.mass[h] > 0.0).collect();
    ranked.sort_by(|&a, &b| acts.mass[b].total_cmp(&acts.mass[a]).then(a.cmp(&b)));
    ranked.truncate(top_n);
    if ranked.is_empty() {
        return Err(Error::Degenerate("no feature is active".into()));
    }
    let mean = ranked.iter().map(|&h| per_feature[h]).sum::<f64>() / ranked.len() as f64;
    Ok((mean, per_feature))
}

pub fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean Jaccard index between the top-clip sets of live features, over all
/// pairs or `sampled_pairs` random pairs when there are more.
pub fn jaccard_uniqueness(
    acts: &ClipActivations,
    top_m: usize,
    sampled_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let sets: Vec<BTreeSet<u32>> = (0..acts.n_latents())
        .filter(|&h| !acts.per_feature[h].is_empty())
        .map(|h| acts.top(h, top_m).iter().map(|&(c, _)| c).collect())
        .collect();
    let n = sets.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} live features, need at least 2")));
    }
    let all_pairs = n * (n - 1) / 2;
    let mut sum = 0.0;
    let count = if all_pairs <= sampled_pairs {
        for i in 0..n {
            for j in i + 1..n {
                sum += jaccard(&sets[i], &sets[j]);
            }
        }
        all_pairs
    } else {
        let mut rng = stream(seed, purpose::JACCARD);
        for _ in 0..sampled_pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            sum += jaccard(&sets[i], &sets[j]);
        }
        sampled_pairs
    };
    Ok(sum / count as f64)
}

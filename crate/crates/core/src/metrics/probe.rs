use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};
use crate::sae::SparseCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    RawPooled,
    SaePooled,
    SaeHighGroup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub l2: f64,
    pub lr: f64,
    pub momentum: f64,
    pub iters: usize,
    pub test_fraction: f64,
    /// Small random initial weights from this seed; zeros when `None`.
    pub init_seed: Option<u64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-4,
            lr: 0.1,
            momentum: 0.9,
            iters: 1000,
            test_fraction: 0.2,
            init_seed: None,
        }
    }
}

/// Multinomial logistic regression on standardised features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub feature_space: FeatureSpace,
    /// `[n_classes, n_features]`
    pub w: Vec<f32>,
    pub b: Vec<f32>,
    /// Standardisation fitted on the training split: `(x - mean) / scale`.
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
    /// Final regularised training loss.
    pub train_loss: f64,
}

impl ProbeModel {
    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (&m, &s))| ((v - m) / s) as f64)
            .collect();
        (0..self.n_classes)
            .map(|c| {
                let row = &self.w[c * self.n_features..(c + 1) * self.n_features];
                self.b[c] as f64 + row.iter().zip(&z).map(|(&w, &v)| w as f64 * v).sum::<f64>()
            })
            .collect()
    }

    /// Highest-logit class, ties to the lower index.
    pub fn predict(&self, x: &[f32]) -> u32 {
        argmax(&self.logits(x)) as u32
    }

    pub fn accuracy(&self, x: &[f32], labels: &[u32]) -> f64 {
        let hits = x
            .chunks_exact(self.n_features)
            .zip(labels)
            .filter(|(row, &y)| self.predict(row) == y)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean of each clip's codes, `[n_clips, F]` with `F = n_latents` or `split`
/// when restricted to the high group.
pub fn pool_codes(
    codes: &[SparseCode],
    tokens_per_clip: usize,
    n_latents: usize,
    restrict_below: Option<usize>,
) -> Result<Vec<f32>> {
    if tokens_per_clip == 0 || codes.len() % tokens_per_clip != 0 {
        return Err(Error::invalid("codes do not split into whole clips"));
    }
    let f = restrict_below.unwrap_or(n_latents);
    Ok(codes
        .par_chunks(tokens_per_clip)
        .flat_map_iter(|clip| {
            let mut acc = vec![0.0f64; f];
            for code in clip {
                for &(j, v) in &code.active {
                    if (j as usize) < f {
                        acc[j as usize] += v as f64;
                    }
                }
            }
            acc.into_iter().map(move |a| (a / tokens_per_clip as f64) as f32)
        })
        .collect())
}

/// Stratified split: each class contributes `round(fraction * n_c)` shuffled
/// samples to the test side. Returns (train, test) indices, both sorted.
pub fn stratified_split(labels: &[u32], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let mut rng = stream(seed, purpose::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == c).collect();
        idx.shuffle(&mut rng);
        let n_test = ((fraction * idx.len() as f64).round() as usize).min(idx.len());
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Fits the probe on a stratified split of `x` (`[n, n_features]`) and
/// returns it with its held-out top-1 accuracy.
pub fn train_probe(
    x: &[f32],
    n_features: usize,
    labels: &[u32],
    feature_space: FeatureSpace,
    split_seed: u64,
    cfg: &ProbeConfig,
) -> Result<(ProbeModel, f64)> {
    let n = labels.len();
    if n_features == 0 || x.len() != n * n_features {
        return Err(Error::DimensionMismatch {
            what: "probe features",
            expected: n * n_features,
            actual: x.len(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    if n_classes < 2 || n < 2 * n_classes {
        return Err(Error::invalid(format!(
            "probe needs >= 2 classes and >= 2 samples per class, got {n} samples of {n_classes} classes"
        )));
    }
    let (train, test) = stratified_split(labels, cfg.test_fraction, split_seed);
    let mut seen = vec![false; n_classes];
    for &i in &train {
        seen[labels[i] as usize] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Missing(format!("class {c} absent from the training split")));
    }
    let model = fit(x, n_features, labels, &train, n_classes, feature_space, cfg)?;
    let test_x: Vec<f32> = test
        .iter()
        .flat_map(|&i| x[i * n_features..(i + 1) * n_features].iter().copied())
        .collect();
    let test_y: Vec<u32> = test.iter().map(|&i| labels[i]).collect();
    let acc = model.accuracy(&test_x, &test_y);
    Ok((model, acc))
}

fn fit(
    x: &[f32],
    nf: usize,
    labels: &[u32],
    rows: &[usize],
    nc: usize,
    feature_space: FeatureSpace,
    cfg: &ProbeConfig,
) -> Result<ProbeModel> {
    let n = rows.len();
    let mut mean = vec![0.0f64; nf];
    for &i in rows {
        mean.iter_mut()
            .zip(&x[i * nf..(i + 1) * nf])
            .for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; nf];
    for &i in rows {
        var.iter_mut()
            .zip(x[i * nf..(i + 1) * nf].iter().zip(&mean))
            .for_each(|(s, (&v, m))| *s += (v as f64 - m).powi(2));
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    // Standardise through f32 exactly as `ProbeModel::logits` does.
    let mean32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
    let scale32: Vec<f32> = scale.iter().map(|&s| s as f32).collect();
    let z: Vec<f64> = rows
        .iter()
        .flat_map(|&i| {
            x[i * nf..(i + 1) * nf]
                .iter()
                .zip(mean32.iter().zip(&scale32))
                .map(|(&v, (&m, &s))| ((v - m) / s) as f64)
        })
        .collect();
    let y: Vec<usize> = rows.iter().map(|&i| labels[i] as usize).collect();

    let mut w = vec![0.0f64; nc * nf];
    let mut b = vec![0.0f64; nc];
    if let Some(seed) = cfg.init_seed {
        let mut rng = stream(seed, purpose::PROBE_INIT);
        for v in w.iter_mut().chain(b.iter_mut()) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = 0.01 * g;
        }
    }
    let mut vw = vec![0.0f64; nc * nf];
    let mut vb = vec![0.0f64; nc];
    let mut loss = f64::NAN;
    for _ in 0..cfg.iters {
        let (l, gw, gb) = loss_and_grad(&z, &y, &w, &b, nf, nc, cfg.l2);
        loss = l;
        for ((v, p), g) in vw.iter_mut().zip(w.iter_mut()).zip(&gw) {
            *v = cfg.momentum * *v - cfg.lr * g;
            *p += *v;
        }
        for ((v, p), g) in vb.iter_mut().zip(b.iter_mut()).zip(&gb) {
            *v = cfg.momentum * *v - cfg.lr * g;
            *p += *v;
        }
    }
    if cfg.iters > 0 {
        loss = loss_and_grad(&z, &y, &w, &b, nf, nc, cfg.l2).0;
    }
    if !w.iter().chain(&b).all(|v| v.is_finite()) || !loss.is_finite() {
        return Err(Error::Degenerate("probe optimisation diverged".into()));
    }
    Ok(ProbeModel {
        n_classes: nc,
        n_features: nf,
        feature_space,
        w: w.iter().map(|&v| v as f32).collect(),
        b: b.iter().map(|&v| v as f32).collect(),
        mean: mean32,
        scale: scale32,
        train_loss: loss,
    })
}

/// Mean cross-entropy plus `l2/2 * ||W||^2`, and its gradient.
fn loss_and_grad(
    z: &[f64],
    y: &[usize],
    w: &[f64],
    b: &[f64],
    nf: usize,
    nc: usize,
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = y.len();
    // per-sample (loss, softmax - onehot)
    let per: Vec<(f64, Vec<f64>)> = z
        .par_chunks(nf)
        .zip(y.par_iter())
        .map(|(row, &yi)| {
            let logits: Vec<f64> = (0..nc)
                .map(|c| b[c] + w[c * nf..(c + 1) * nf].iter().zip(row).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            let loss = s.ln() + m - logits[yi];
            let mut r: Vec<f64> = exps.iter().map(|e| e / s).collect();
            r[yi] -= 1.0;
            (loss, r)
        })
        .collect();
    let inv_n = 1.0 / n as f64;
    let mut loss = per.iter().map(|p| p.0).sum::<f64>() * inv_n;
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    let mut gb = vec![0.0; nc];
    for (_, r) in &per {
        gb.iter_mut().zip(r).for_each(|(g, v)| *g += v * inv_n);
    }
    let mut gw = vec![0.0; nc * nf];
    gw.par_chunks_mut(nf).enumerate().for_each(|(c, grow)| {
        for (row, (_, r)) in z.chunks_exact(nf).zip(&per) {
            let rc = r[c] * inv_n;
            if rc != 0.0 {
                grow.iter_mut().zip(row).for_each(|(g, v)| *g += rc * v);
            }
        }
        let wrow = &w[c * nf..(c + 1) * nf];
        grow.iter_mut().zip(wrow).for_each(|(g, v)| *g += l2 * v);
    });
    (loss, gw, gb)
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::sae::SparseCode;

/// Series with variance below this in either slice are excluded.
pub const MIN_SERIES_VARIANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lag1Mode {
    /// One series per (clip, feature): the mean over patches of each frame.
    #[default]
    FramePooled,
    /// One series per (clip, patch, feature).
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lag1Stats {
    /// Mean correlation over every included series.
    pub mean: f64,
    /// Fraction of features whose mean correlation is below 0.3.
    pub frac_below_03: f64,
    pub n_series: usize,
    pub n_features: usize,
}

/// Pearson correlation of `a[..T-1]` with `a[1..]`, `None` when either
/// slice is (numerically) constant.
pub fn lag1_pearson(a: &[f64]) -> Option<f64> {
    if a.len() < 3 {
        return None;
    }
    let x = &a[..a.len() - 1];
    let y = &a[1..];
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&u, &v) in x.iter().zip(y) {
        sxx += (u - mx) * (u - mx);
        syy += (v - my) * (v - my);
        sxy += (u - mx) * (v - my);
    }
    if sxx / n < MIN_SERIES_VARIANCE || syy / n < MIN_SERIES_VARIANCE {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Shared driver: `fill(clip, buf)` writes the clip as `[T, P, F]`.
fn lag1_driver<G>(
    n_clips: usize,
    frames: usize,
    patches: usize,
    n_features: usize,
    mode: Lag1Mode,
    fill: G,
) -> Result<Lag1Stats>
where
    G: Fn(usize, &mut [f64]) + Sync,
{
    if frames < 3 {
        return Err(Error::invalid(format!("lag-1 autocorrelation needs T >= 3, got {frames}")));
    }
    let per_clip: Vec<Vec<(u32, f64)>> = (0..n_clips)
        .into_par_iter()
        .map(|c| {
            let mut buf = vec![0.0; frames * patches * n_features];
            fill(c, &mut buf);
            let mut out = Vec::new();
            let mut series = vec![0.0; frames];
            match mode {
                Lag1Mode::FramePooled => {
                    for f in 0..n_features {
                        for (t, s) in series.iter_mut().enumerate() {
                            let base = t * patches * n_features;
                            *s = (0..patches).map(|p| buf[base + p * n_features + f]).sum::<f64>()
                                / patches as f64;
                        }
                        if let Some(r) = lag1_pearson(&series) {
                            out.push((f as u32, r));
                        }
                    }
                }
                Lag1Mode::Patch => {
                    for p in 0..patches {
                        for f in 0..n_features {
                            for (t, s) in series.iter_mut().enumerate() {
                                *s = buf[(t * patches + p) * n_features + f];
                            }
                            if let Some(r) = lag1_pearson(&series) {
                                out.push((f as u32, r));
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut sum = 0.0;
    let mut count = 0usize;
    let mut feat_sum = vec![0.0; n_features];
    let mut feat_n = vec![0usize; n_features];
    for (f, r) in per_clip.into_iter().flatten() {
        sum += r;
        count += 1;
        feat_sum[f as usize] += r;
        feat_n[f as usize] += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate(
            "every lag-1 series is constant in time".into(),
        ));
    }
    let live: Vec<f64> = feat_sum
        .iter()
        .zip(&feat_n)
        .filter(|(_, &n)| n > 0)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let below = live.iter().filter(|&&m| m < 0.3).count();
    Ok(Lag1Stats {
        mean: sum / count as f64,
        frac_below_03: below as f64 / live.len() as f64,
        n_series: count,
        n_features: live.len(),
    })
}

/// Lag-1 coherence of the raw feature channels.
pub fn lag1_raw(features: &FeatureTensor, mode: Lag1Mode) -> Result<Lag1Stats> {
    lag1_driver(
        features.n_clips,
        features.frames,
        features.patches,
        features.dim,
        mode,
        |c, buf| {
            for (o, &v) in buf.iter_mut().zip(features.clip(c)) {
                *o = v as f64;
            }
        },
    )
}

/// Lag-1 coherence of SAE codes laid out clip, frame, patch.
pub fn lag1_codes(
    codes: &[SparseCode],
    n_clips: usize,
    frames: usize,
    patches: usize,
    mode: Lag1Mode,
) -> Result<Lag1Stats> {
    let per = frames * patches;
    if codes.len() != n_clips * per {
        return Err(Error::DimensionMismatch {
            what: "code count",
            expected: n_clips * per,
            actual: codes.len(),
        });
    }
    let h = codes.first().map_or(0, |c| c.n_latents);
    lag1_driver(n_clips, frames, patches, h, mode, |c, buf| {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for (tok, code) in codes[c * per..(c + 1) * per].iter().enumerate() {
            for &(j, v) in &code.active {
                buf[tok * h + j as usize] = v as f64;
            }
        }
    })
}

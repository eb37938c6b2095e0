use crate::error::{Error, Result};
use crate::sae::{topk_activate, SparseCode};

/// EMA over frames for one clip, `z~_0 = z_0`,
/// `z~_t = alpha z_t + (1 - alpha) z~_{t-1}` per (patch, latent).
/// `codes` is `[T, P]`; the result is dense `[T, P, H]`.
pub fn ema_smooth(codes: &[SparseCode], frames: usize, patches: usize, alpha: f32) -> Result<Vec<f32>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("EMA alpha {alpha} must lie in (0, 1]")));
    }
    if codes.len() != frames * patches {
        return Err(Error::DimensionMismatch {
            what: "clip codes",
            expected: frames * patches,
            actual: codes.len(),
        });
    }
    let h = codes.first().map_or(0, |c| c.n_latents);
    let mut out = vec![0.0f32; frames * patches * h];
    for (i, code) in codes.iter().enumerate() {
        let row = &mut out[i * h..(i + 1) * h];
        for &(j, v) in &code.active {
            row[j as usize] = v;
        }
    }
    let beta = 1.0 - alpha;
    let stride = patches * h;
    for t in 1..frames {
        let (prev, cur) = out.split_at_mut(t * stride);
        let prev = &prev[(t - 1) * stride..];
        for (c, &p) in cur[..stride].iter_mut().zip(prev) {
            *c = alpha * *c + beta * p;
        }
    }
    Ok(out)
}

/// EMA-smoothed codes for every clip, stored sparsely without loss (every
/// nonzero of the dense result is kept).
pub fn ema_smooth_codes(
    codes: &[SparseCode],
    frames: usize,
    patches: usize,
    alpha: f32,
) -> Result<Vec<SparseCode>> {
    let per = frames * patches;
    if per == 0 || codes.len() % per != 0 {
        return Err(Error::invalid("codes do not split into whole clips"));
    }
    let h = codes.first().map_or(0, |c| c.n_latents);
    let mut out = Vec::with_capacity(codes.len());
    for clip in codes.chunks_exact(per) {
        let dense = ema_smooth(clip, frames, patches, alpha)?;
        out.extend(dense.chunks_exact(h.max(1)).map(SparseCode::from_dense));
    }
    Ok(out)
}

/// Temporal Union TopK for one clip of preactivations `[T, P, H]`. Frame 0
/// is plain TopK of the ReLU'd preactivations; at frame `t` the candidates
/// are the plain TopK set at `t` together with this procedure's selection at
/// `t - 1`, and the `k` largest positive frame-`t` preactivations among them
/// are kept, ties to the lower index.
pub fn temporal_union_topk(
    preacts: &[f32],
    frames: usize,
    patches: usize,
    n_latents: usize,
    k: usize,
) -> Result<Vec<SparseCode>> {
    if preacts.len() != frames * patches * n_latents {
        return Err(Error::DimensionMismatch {
            what: "clip preactivations",
            expected: frames * patches * n_latents,
            actual: preacts.len(),
        });
    }
    let h = n_latents;
    let mut out: Vec<SparseCode> = Vec::with_capacity(frames * patches);
    for t in 0..frames {
        for p in 0..patches {
            let i = t * patches + p;
            let relu: Vec<f32> = preacts[i * h..(i + 1) * h].iter().map(|v| v.max(0.0)).collect();
            let plain = topk_activate(&relu, k)?;
            if t == 0 {
                out.push(plain);
                continue;
            }
            let prev = &out[(t - 1) * patches + p];
            let mut candidates: Vec<u32> = plain
                .active
                .iter()
                .chain(&prev.active)
                .map(|&(j, _)| j)
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            let mut scored: Vec<(u32, f32)> = candidates
                .into_iter()
                .map(|j| (j, relu[j as usize]))
                .filter(|&(_, v)| v > 0.0)
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(k);
            scored.sort_unstable_by_key(|&(j, _)| j);
            out.push(SparseCode::new(h, scored)?);
        }
    }
    Ok(out)
}

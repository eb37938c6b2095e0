//! Sparse activations: hard selections (TopK, BatchTopK, Matryoshka) and
//! simplex projections (sparsemax, entmax-1.5).
//!
//! Hard selections break ties by lower index (lower token, then lower latent
//! for BatchTopK) so results never depend on sort stability.

use std::cmp::Ordering;

use super::SparseCode;
use crate::error::{Error, Result};
use crate::real::Real;

pub const ENTMAX_BISECTION_ITERS: usize = 60;

/// Descending by value, ascending by position.
fn rank<F: Real>(a: &(usize, F), b: &(usize, F)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Keeps up to `k` largest strictly positive entries from `(position, value)`
/// candidates, returned in position order.
fn select_top<F: Real>(mut cand: Vec<(usize, F)>, k: usize) -> Vec<(usize, F)> {
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, rank);
        cand.truncate(k);
    }
    cand.sort_unstable_by_key(|&(i, _)| i);
    cand
}

fn positives<F: Real>(values: &[F]) -> Vec<(usize, F)> {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > F::zero())
        .map(|(i, &v)| (i, v))
        .collect()
}

pub fn topk_activate<F: Real>(preact: &[F], k: usize) -> Result<SparseCode<F>> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let kept = select_top(positives(preact), k);
    Ok(SparseCode {
        n_latents: preact.len(),
        active: kept.into_iter().map(|(i, v)| (i as u32, v)).collect(),
    })
}

/// Joint selection of the `B*k` largest positive entries of a `[B, H]`
/// matrix.
pub fn batch_topk_activate<F: Real>(
    preacts: &[F],
    n_latents: usize,
    k: usize,
) -> Result<Vec<SparseCode<F>>> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n_latents == 0 || preacts.is_empty() || !preacts.len().is_multiple_of(n_latents) {
        return Err(Error::invalid("batch must hold at least one full row"));
    }
    let b = preacts.len() / n_latents;
    let kept = select_top(positives(preacts), b * k);
    let mut codes = vec![SparseCode::empty(n_latents); b];
    for (flat, v) in kept {
        codes[flat / n_latents]
            .active
            .push(((flat % n_latents) as u32, v));
    }
    Ok(codes)
}

/// Full codes and their high-group restriction.
pub type NestedCodes<F> = (Vec<SparseCode<F>>, Vec<SparseCode<F>>);

/// BatchTopK over all latents, plus the same actives restricted to the
/// high-level group `[0, split)`.
pub fn matryoshka_activate<F: Real>(
    preacts: &[F],
    n_latents: usize,
    k: usize,
    split: usize,
) -> Result<NestedCodes<F>> {
    if split == 0 || split >= n_latents {
        return Err(Error::invalid(format!(
            "split {split} must lie in (0, {n_latents})"
        )));
    }
    let codes = batch_topk_activate(preacts, n_latents, k)?;
    let high = codes.iter().map(|c| c.restrict_below(split)).collect();
    Ok((codes, high))
}

/// Sort-based sparsemax threshold of `v`: the `tau` with
/// `sum_i max(v_i - tau, 0) = 1`.
pub fn sparsemax_threshold<F: Real>(v: &[F]) -> F {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumsum = F::zero();
    let mut support_sum = F::zero();
    let mut support = 0usize;
    for (j, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let r = F::of((j + 1) as f64);
        if F::one() + r * x > cumsum {
            support = j + 1;
            support_sum = cumsum;
        }
    }
    (support_sum - F::one()) / F::of(support.max(1) as f64)
}

pub fn sparsemax_activate<F: Real>(preact_raw: &[F], temperature: f64) -> Result<SparseCode<F>> {
    check_temperature(temperature)?;
    let t = F::of(temperature);
    let v: Vec<F> = preact_raw.iter().map(|&x| x / t).collect();
    let tau = sparsemax_threshold(&v);
    Ok(SparseCode {
        n_latents: v.len(),
        active: v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > tau)
            .map(|(i, &x)| (i as u32, x - tau))
            .collect(),
    })
}

/// Entmax with alpha = 1.5: `z_i = max(v_i/2 - tau, 0)^2` with the threshold
/// found by bisection on `[max - 1, max]` of the halved scores, then
/// renormalised to sum to one.
pub fn entmax15_activate<F: Real>(preact_raw: &[F], temperature: f64) -> Result<SparseCode<F>> {
    check_temperature(temperature)?;
    let scale = F::of(0.5 / temperature);
    let u: Vec<F> = preact_raw.iter().map(|&x| x * scale).collect();
    let tau = entmax15_threshold(&u);
    let mut active: Vec<(u32, F)> = u
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > tau)
        .map(|(i, &x)| (i as u32, (x - tau) * (x - tau)))
        .collect();
    let total = active.iter().fold(F::zero(), |acc, &(_, z)| acc + z);
    active.iter_mut().for_each(|(_, z)| *z /= total);
    active.retain(|&(_, z)| z > F::zero());
    Ok(SparseCode {
        n_latents: u.len(),
        active,
    })
}

pub(crate) fn entmax15_threshold<F: Real>(u: &[F]) -> F {
    let max = u.iter().copied().fold(F::neg_infinity(), F::max);
    let (mut lo, mut hi) = (max - F::one(), max);
    for _ in 0..ENTMAX_BISECTION_ITERS {
        let mid = (lo + hi) * F::of(0.5);
        let mass = u.iter().fold(F::zero(), |acc, &x| {
            let d = (x - mid).max(F::zero());
            acc + d * d
        });
        if mass >= F::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * F::of(0.5)
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature {t} must be > 0")))
    }
}

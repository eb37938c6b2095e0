//! InfoNCE over cosine similarities of sparse codes, with its exact gradient
//! with respect to the active code entries.

use rayon::prelude::*;

use super::PairSet;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::sae::SparseCode;

const ROW_BLOCK: usize = 512;

/// Mean over anchors of `-log softmax` of the positive's cosine similarity
/// against every candidate, at temperature `tau`. `positive[i]` indexes the
/// positive of anchor `i` in `candidates`.
pub fn infonce<F: Real>(
    anchors: &[SparseCode<F>],
    candidates: &[SparseCode<F>],
    positive: &[usize],
    tau: f64,
) -> Result<F> {
    if anchors.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            what: "positive indices",
            expected: anchors.len(),
            actual: positive.len(),
        });
    }
    check_tau(tau)?;
    if let Some(&bad) = positive.iter().find(|&&p| p >= candidates.len()) {
        return Err(Error::invalid(format!("positive {bad} not among candidates")));
    }
    let tau = F::of(tau);
    let losses: Vec<F> = anchors
        .iter()
        .zip(positive)
        .map(|(a, &pos)| {
            let logits: Vec<F> = candidates.iter().map(|c| a.cosine(c) / tau).collect();
            log_sum_exp(&logits) - logits[pos]
        })
        .collect();
    Ok(mean(&losses))
}

/// InfoNCE over a batch of codes addressed by token id. An anchor is never
/// scored against itself. Returns the loss and, if requested, the gradient
/// for every token aligned with that token's `active` list.
pub fn infonce_pairs<F: Real>(
    codes: &[SparseCode<F>],
    pairs: &PairSet,
    tau: f64,
    want_grad: bool,
) -> Result<(F, Option<Vec<Vec<F>>>)> {
    check_tau(tau)?;
    let n = pairs.pairs.len();
    if n == 0 {
        let grads = want_grad.then(|| codes.iter().map(|c| vec![F::zero(); c.l0()]).collect());
        return Ok((F::zero(), grads));
    }
    let cand = &pairs.candidates;
    if let Some(&bad) = cand.iter().find(|&&c| c >= codes.len()) {
        return Err(Error::invalid(format!("candidate token {bad} out of range")));
    }
    let pos_slot: Vec<usize> = pairs
        .pairs
        .iter()
        .map(|&(a, p)| {
            if a == p || a >= codes.len() {
                return Err(Error::invalid(format!("invalid pair ({a}, {p})")));
            }
            cand.binary_search(&p)
                .map_err(|_| Error::invalid(format!("positive {p} not among candidates")))
        })
        .collect::<Result<_>>()?;

    let norms: Vec<F> = codes.iter().map(SparseCode::norm).collect();
    let inv_tau = F::one() / F::of(tau);
    let scale = inv_tau / F::of(n as f64);
    let mut losses = Vec::with_capacity(n);
    let mut grads: Option<Vec<Vec<F>>> =
        want_grad.then(|| codes.iter().map(|c| vec![F::zero(); c.l0()]).collect());

    let h = codes.first().map_or(0, |c| c.n_latents);

    for block_start in (0..n).step_by(ROW_BLOCK) {
        let block = block_start..(block_start + ROW_BLOCK).min(n);
        // per anchor row: loss, similarities, dL/ds weights
        let rows: Vec<(F, Vec<F>, Vec<F>)> = block
            .clone()
            .into_par_iter()
            .map_init(
                || SlotMap::new(h),
                |slots, i| {
                    let (a_id, _) = pairs.pairs[i];
                    let a = &codes[a_id];
                    slots.load(a);
                    let sims: Vec<F> = cand
                        .iter()
                        .map(|&c| {
                            if norms[a_id] == F::zero() || norms[c] == F::zero() {
                                F::zero()
                            } else {
                                slots.dot(a, &codes[c]) / (norms[a_id] * norms[c])
                            }
                        })
                        .collect();
                    slots.clear(a);
                    let mut max = F::neg_infinity();
                    for (j, &s) in sims.iter().enumerate() {
                        if cand[j] != a_id {
                            max = max.max(s * inv_tau);
                        }
                    }
                    let mut denom = F::zero();
                    let mut probs = vec![F::zero(); sims.len()];
                    for (j, &s) in sims.iter().enumerate() {
                        if cand[j] != a_id {
                            probs[j] = (s * inv_tau - max).exp();
                            denom += probs[j];
                        }
                    }
                    let loss = max + denom.ln() - sims[pos_slot[i]] * inv_tau;
                    let mut w = Vec::new();
                    if want_grad {
                        w = probs.iter().map(|&p| p / denom).collect();
                        w[pos_slot[i]] -= F::one();
                        w.iter_mut().for_each(|x| *x *= scale);
                    }
                    (loss, sims, w)
                },
            )
            .collect();

        losses.extend(rows.iter().map(|r| r.0));
        let Some(grads) = grads.as_mut() else { continue };

        // anchor side
        let anchor_grads: Vec<Vec<F>> = rows
            .par_iter()
            .zip(block.clone().into_par_iter())
            .map_init(
                || SlotMap::new(h),
                |slots, ((_, sims, w), i)| {
                    let a_id = pairs.pairs[i].0;
                    let a = &codes[a_id];
                    let mut g = vec![F::zero(); a.l0()];
                    if norms[a_id] == F::zero() {
                        return g;
                    }
                    slots.load(a);
                    let mut self_coef = F::zero();
                    for (j, &c_id) in cand.iter().enumerate() {
                        if c_id == a_id || norms[c_id] == F::zero() || w[j] == F::zero() {
                            continue;
                        }
                        let coef = w[j] / (norms[a_id] * norms[c_id]);
                        slots.accumulate(&codes[c_id], coef, &mut g);
                        self_coef += w[j] * sims[j];
                    }
                    slots.clear(a);
                    let inv_sq = F::one() / (norms[a_id] * norms[a_id]);
                    for (gv, &(_, v)) in g.iter_mut().zip(&a.active) {
                        *gv -= self_coef * v * inv_sq;
                    }
                    g
                },
            )
            .collect();
        for (g, i) in anchor_grads.into_iter().zip(block.clone()) {
            let a_id = pairs.pairs[i].0;
            for (dst, v) in grads[a_id].iter_mut().zip(g) {
                *dst += v;
            }
        }

        // candidate side
        let cand_grads: Vec<Vec<F>> = cand
            .par_iter()
            .enumerate()
            .map_init(
                || SlotMap::new(h),
                |slots, (j, &c_id)| {
                    let c = &codes[c_id];
                    let mut g = vec![F::zero(); c.l0()];
                    if norms[c_id] == F::zero() {
                        return g;
                    }
                    slots.load(c);
                    let mut self_coef = F::zero();
                    for ((_, sims, w), i) in rows.iter().zip(block.clone()) {
                        let a_id = pairs.pairs[i].0;
                        if a_id == c_id || norms[a_id] == F::zero() || w[j] == F::zero() {
                            continue;
                        }
                        let coef = w[j] / (norms[a_id] * norms[c_id]);
                        slots.accumulate(&codes[a_id], coef, &mut g);
                        self_coef += w[j] * sims[j];
                    }
                    slots.clear(c);
                    let inv_sq = F::one() / (norms[c_id] * norms[c_id]);
                    for (gv, &(_, v)) in g.iter_mut().zip(&c.active) {
                        *gv -= self_coef * v * inv_sq;
                    }
                    g
                },
            )
            .collect();
        for (g, &c_id) in cand_grads.into_iter().zip(cand) {
            for (dst, v) in grads[c_id].iter_mut().zip(g) {
                *dst += v;
            }
        }
    }

    Ok((mean(&losses), grads))
}

/// Dense latent -> slot lookup for one "target" code, so that dot products
/// and gradient accumulation against other codes cost one probe per active
/// entry of the other code. Entries hold `slot + 1`; zero means absent.
struct SlotMap {
    slot: Vec<u32>,
}

impl SlotMap {
    fn new(n_latents: usize) -> Self {
        SlotMap {
            slot: vec![0; n_latents],
        }
    }

    fn load<F: Real>(&mut self, target: &SparseCode<F>) {
        for (t, &(j, _)) in target.active.iter().enumerate() {
            self.slot[j as usize] = t as u32 + 1;
        }
    }

    fn clear<F: Real>(&mut self, target: &SparseCode<F>) {
        for &(j, _) in &target.active {
            self.slot[j as usize] = 0;
        }
    }

    /// `<target, other>` summed in increasing latent order.
    fn dot<F: Real>(&self, target: &SparseCode<F>, other: &SparseCode<F>) -> F {
        let mut acc = F::zero();
        for &(j, v) in &other.active {
            let s = self.slot[j as usize];
            if s != 0 {
                acc += target.active[s as usize - 1].1 * v;
            }
        }
        acc
    }

    /// `g[slot of i] += coef * other[i]` for every latent shared with the
    /// loaded target.
    fn accumulate<F: Real>(&self, other: &SparseCode<F>, coef: F, g: &mut [F]) {
        for &(j, v) in &other.active {
            let s = self.slot[j as usize];
            if s != 0 {
                g[s as usize - 1] += coef * v;
            }
        }
    }
}

fn log_sum_exp<F: Real>(v: &[F]) -> F {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    max + v.iter().map(|&x| (x - max).exp()).sum::<F>().ln()
}

fn mean<F: Real>(v: &[F]) -> F {
    if v.is_empty() {
        F::zero()
    } else {
        v.iter().copied().sum::<F>() / F::of(v.len() as f64)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau {tau} must be > 0")))
    }
}

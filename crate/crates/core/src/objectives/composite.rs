//! Forward pass of the composite objective and its analytic gradient.
//!
//! Gradients follow the straight-through convention for hard selections:
//! the active set is held fixed and gradients flow through the kept values
//! only. Sparsemax and entmax-1.5 use their exact Jacobians on the support.
//! All reductions run in a fixed order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{infonce_pairs, raster_pairs, spatial_pairs, temporal_pairs, PairSet};
use super::{Variant, VariantConfig};
use crate::error::{Error, Result};
use crate::features::{Batch, BatchLayout};
use crate::real::Real;
use crate::sae::{
    batch_topk_activate, entmax15_activate, sparsemax_activate, topk_activate, Activation,
    SaeParams, SparseCode,
};

use super::aux_reconstruction;

/// Weighted contribution of every loss term; the terms sum to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub aux: f64,
    pub temp: f64,
    pub spat: f64,
    pub raster: f64,
    pub mat: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("recon", self.recon),
            ("aux", self.aux),
            ("temp", self.temp),
            ("spat", self.spat),
            ("raster", self.raster),
            ("mat", self.mat),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms().iter().all(|(_, v)| v.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "total={}", self.total)?;
        for (name, v) in self.terms() {
            write!(f, " {name}={v}")?;
        }
        Ok(())
    }
}

/// Gradients with the same shapes as [`SaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F = f32> {
    pub w_enc: Vec<F>,
    pub b_enc: Vec<F>,
    pub b_pre: Vec<F>,
    pub atoms: Vec<F>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(params: &SaeParams<F>) -> Self {
        Gradients {
            w_enc: vec![F::zero(); params.w_enc.len()],
            b_enc: vec![F::zero(); params.b_enc.len()],
            b_pre: vec![F::zero(); params.b_pre.len()],
            atoms: vec![F::zero(); params.atoms.len()],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.w_enc
            .iter()
            .chain(&self.b_enc)
            .chain(&self.b_pre)
            .chain(&self.atoms)
            .all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.w_enc
            .iter()
            .chain(&self.b_enc)
            .chain(&self.b_pre)
            .chain(&self.atoms)
            .map(|v| v.to_f64_lossy().abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions<'a> {
    /// Dead-latent mask for the auxiliary loss; `None` disables it.
    pub dead: Option<&'a [bool]>,
    pub want_grads: bool,
    /// Leaves the decoder gradient at zero.
    pub frozen_decoder: bool,
}

pub struct Evaluation<F> {
    pub breakdown: LossBreakdown,
    pub grads: Option<Gradients<F>>,
    pub codes: Vec<SparseCode<F>>,
}

/// Composite loss of `batch` under `cfg`, without gradients or aux loss.
pub fn total_loss<F: Real>(
    batch: &Batch<F>,
    params: &SaeParams<F>,
    cfg: &VariantConfig,
) -> Result<(f64, LossBreakdown)> {
    let eval = evaluate(params, batch, cfg, EvalOptions::default())?;
    Ok((eval.breakdown.total, eval.breakdown))
}

struct TokenForward<F> {
    /// `x_hat - x`
    resid: Vec<F>,
    /// `e - e_hat` of the aux reconstruction, `e = x - x_hat`
    aux_resid: Option<Vec<F>>,
    aux_code: Option<SparseCode<F>>,
    /// `x_hat_high - x`
    high_resid: Option<Vec<F>>,
}

fn pair_sets(cfg: &VariantConfig, layout: BatchLayout) -> Result<Vec<(&'static str, f64, PairSet)>> {
    if cfg.variant == Variant::Standard {
        return Ok(Vec::new());
    }
    let BatchLayout::Clips {
        n_clips,
        frames,
        patches,
    } = layout
    else {
        return Err(Error::invalid(format!(
            "variant {} needs whole-clip batches",
            cfg.variant.name()
        )));
    };
    let per_clip = frames * patches;
    let mut sets = Vec::new();
    match cfg.variant {
        Variant::Standard => {}
        Variant::Temporal => {
            sets.push(("temp", cfg.lambda_t, temporal_pairs(frames, patches)?.tile(n_clips, per_clip)));
        }
        Variant::Separate => {
            sets.push(("temp", cfg.lambda_t, temporal_pairs(frames, patches)?.tile(n_clips, per_clip)));
            let w = cfg.frame_width_for(patches)?;
            sets.push(("spat", cfg.lambda_s, spatial_pairs(frames, patches, w)?.tile(n_clips, per_clip)));
        }
        Variant::Raster => {
            sets.push(("raster", cfg.lambda_r, raster_pairs(frames, patches).tile(n_clips, per_clip)));
        }
    }
    Ok(sets)
}

fn activate<F: Real>(raw: &[F], params: &SaeParams<F>) -> Result<Vec<SparseCode<F>>> {
    let cfg = &params.config;
    let h = cfg.n_latents;
    match cfg.activation {
        Activation::Sparsemax { temperature } => raw
            .par_chunks(h)
            .map(|r| sparsemax_activate(r, temperature))
            .collect(),
        Activation::Entmax15 { temperature } => raw
            .par_chunks(h)
            .map(|r| entmax15_activate(r, temperature))
            .collect(),
        Activation::TopK | Activation::BatchTopK => {
            let joint = cfg.activation == Activation::BatchTopK || cfg.matryoshka_split.is_some();
            if joint {
                let relu: Vec<F> = raw.par_iter().map(|v| v.max(F::zero())).collect();
                batch_topk_activate(&relu, h, cfg.k)
            } else {
                raw.par_chunks(h)
                    .map(|r| {
                        let relu: Vec<F> = r.iter().map(|v| v.max(F::zero())).collect();
                        topk_activate(&relu, cfg.k)
                    })
                    .collect()
            }
        }
    }
}

pub fn evaluate<F: Real>(
    params: &SaeParams<F>,
    batch: &Batch<F>,
    cfg: &VariantConfig,
    opts: EvalOptions<'_>,
) -> Result<Evaluation<F>> {
    cfg.validate()?;
    let (d, h) = (params.d_in(), params.n_latents());
    if batch.dim != d {
        return Err(Error::DimensionMismatch {
            what: "batch dim",
            expected: d,
            actual: batch.dim,
        });
    }
    let n = batch.n_tokens;
    if n == 0 || batch.data.len() != n * d {
        return Err(Error::invalid("empty or malformed batch"));
    }
    if let Some(dead) = opts.dead {
        if dead.len() != h {
            return Err(Error::DimensionMismatch {
                what: "dead mask",
                expected: h,
                actual: dead.len(),
            });
        }
    }
    let pair_sets = pair_sets(cfg, batch.layout)?;

    let raw: Vec<F> = batch
        .data
        .par_chunks(d)
        .flat_map_iter(|x| {
            let u: Vec<F> = x.iter().zip(&params.b_pre).map(|(&a, &b)| a - b).collect();
            params
                .w_enc
                .chunks_exact(d)
                .zip(&params.b_enc)
                .map(move |(row, &b)| crate::sae::dot(row, &u) + b)
                .collect::<Vec<_>>()
        })
        .collect();
    let codes = activate(&raw, params)?;

    let dead = opts.dead.filter(|m| m.iter().any(|&x| x));
    let k_aux = cfg.aux_k.unwrap_or(2 * params.config.k).min(h);
    let split = params.config.matryoshka_split.filter(|_| cfg.alpha_mat > 0.0);

    let forward: Vec<TokenForward<F>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = batch.token(i);
            let code = &codes[i];
            let mut xhat = params.b_pre.clone();
            let mut xhigh = split.map(|_| params.b_pre.clone());
            for &(j, v) in &code.active {
                let atom = params.atom(j as usize);
                for (o, &w) in xhat.iter_mut().zip(atom) {
                    *o += v * w;
                }
                if let (Some(m), Some(xh)) = (split, xhigh.as_mut()) {
                    if (j as usize) < m {
                        for (o, &w) in xh.iter_mut().zip(atom) {
                            *o += v * w;
                        }
                    }
                }
            }
            let resid: Vec<F> = xhat.iter().zip(x).map(|(&a, &b)| a - b).collect();
            let (aux_resid, aux_code) = match dead {
                Some(mask) => {
                    let relu: Vec<F> = raw[i * h..(i + 1) * h].iter().map(|v| v.max(F::zero())).collect();
                    let z = aux_reconstruction(&relu, mask, k_aux);
                    let mut q: Vec<F> = resid.iter().map(|&r| -r).collect();
                    for &(j, v) in &z.active {
                        for (qv, &w) in q.iter_mut().zip(params.atom(j as usize)) {
                            *qv -= v * w;
                        }
                    }
                    (Some(q), Some(z))
                }
                None => (None, None),
            };
            let high_resid = xhigh.map(|xh| xh.iter().zip(x).map(|(&a, &b)| a - b).collect());
            TokenForward {
                resid,
                aux_resid,
                aux_code,
                high_resid,
            }
        })
        .collect();

    let inv_n = F::one() / F::of(n as f64);
    // folds from +0 so that absent terms report 0 rather than -0
    let add = |a: F, b: F| a + b;
    let sq = |v: &[F]| v.iter().map(|&x| x * x).fold(F::zero(), add);
    let recon = forward.iter().map(|t| sq(&t.resid)).fold(F::zero(), add) * inv_n;
    let aux = forward
        .iter()
        .filter_map(|t| t.aux_resid.as_deref())
        .map(sq)
        .fold(F::zero(), add)
        * inv_n;
    let mat = forward
        .iter()
        .filter_map(|t| t.high_resid.as_deref())
        .map(sq)
        .fold(F::zero(), add)
        * inv_n;

    let alpha_aux = F::of(cfg.alpha_aux);
    let alpha_mat = F::of(cfg.alpha_mat);
    let mut breakdown = LossBreakdown {
        recon: recon.to_f64_lossy(),
        aux: (alpha_aux * aux).to_f64_lossy(),
        mat: if split.is_some() {
            (alpha_mat * mat).to_f64_lossy()
        } else {
            0.0
        },
        ..Default::default()
    };
    let mut total = recon + alpha_aux * aux + if split.is_some() { alpha_mat * mat } else { F::zero() };

    let mut contrastive_grads: Vec<(&'static str, F, Vec<Vec<F>>)> = Vec::new();
    for (term, lambda, pairs) in &pair_sets {
        let (loss, grads) = infonce_pairs(&codes, pairs, cfg.tau, opts.want_grads)?;
        let lambda = F::of(*lambda);
        let weighted = (lambda * loss).to_f64_lossy();
        match *term {
            "temp" => breakdown.temp = weighted,
            "spat" => breakdown.spat = weighted,
            _ => breakdown.raster = weighted,
        }
        total += lambda * loss;
        if let Some(g) = grads {
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { term });
            }
            contrastive_grads.push((term, lambda, g));
        }
    }
    breakdown.total = total.to_f64_lossy();

    let grads = if opts.want_grads {
        Some(backward(
            params,
            batch,
            &codes,
            &forward,
            &contrastive_grads,
            split,
            alpha_aux,
            alpha_mat,
            opts.frozen_decoder,
        )?)
    } else {
        None
    };

    Ok(Evaluation {
        breakdown,
        grads,
        codes,
    })
}

struct TokenBackward<F> {
    /// dL/dx_hat (reconstruction and aux through the residual)
    d_xhat: Vec<F>,
    /// dL/de_hat of the aux reconstruction
    d_aux: Option<Vec<F>>,
    d_high: Option<Vec<F>>,
    /// dL/dpreact as (latent, value); latents may repeat
    d_pre: Vec<(u32, F)>,
    /// sum_j dpre_j * w_enc[j]
    d_u: Vec<F>,
}

#[allow(clippy::too_many_arguments)]
fn backward<F: Real>(
    params: &SaeParams<F>,
    batch: &Batch<F>,
    codes: &[SparseCode<F>],
    forward: &[TokenForward<F>],
    contrastive: &[(&'static str, F, Vec<Vec<F>>)],
    split: Option<usize>,
    alpha_aux: F,
    alpha_mat: F,
    frozen_decoder: bool,
) -> Result<Gradients<F>> {
    let (d, h) = (params.d_in(), params.n_latents());
    let n = batch.n_tokens;
    let two_n = F::of(2.0) / F::of(n as f64);
    let activation = params.config.activation;

    let per_token: Vec<TokenBackward<F>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fw = &forward[i];
            let code = &codes[i];
            let mut d_xhat: Vec<F> = fw.resid.iter().map(|&r| two_n * r).collect();
            let d_aux = fw.aux_resid.as_ref().map(|q| {
                // e = x - x_hat, so dL/dx_hat picks up -dL/de
                let dq: Vec<F> = q.iter().map(|&v| two_n * alpha_aux * v).collect();
                for (dx, &g) in d_xhat.iter_mut().zip(&dq) {
                    *dx -= g;
                }
                dq.iter().map(|&g| -g).collect::<Vec<F>>()
            });
            let d_high = fw
                .high_resid
                .as_ref()
                .map(|r| r.iter().map(|&v| two_n * alpha_mat * v).collect::<Vec<F>>());

            let mut d_z: Vec<F> = code
                .active
                .iter()
                .map(|&(j, _)| {
                    let atom = params.atom(j as usize);
                    let mut g = crate::sae::dot(atom, &d_xhat);
                    if let (Some(m), Some(dh)) = (split, d_high.as_ref()) {
                        if (j as usize) < m {
                            g += crate::sae::dot(atom, dh);
                        }
                    }
                    g
                })
                .collect();
            for (_, lambda, g) in contrastive {
                for (dz, &v) in d_z.iter_mut().zip(&g[i]) {
                    *dz += *lambda * v;
                }
            }

            let mut d_pre: Vec<(u32, F)> = match activation {
                Activation::TopK | Activation::BatchTopK => code
                    .active
                    .iter()
                    .zip(&d_z)
                    .map(|(&(j, _), &g)| (j, g))
                    .collect(),
                Activation::Sparsemax { temperature } => {
                    let inv_t = F::one() / F::of(temperature);
                    let mean = if d_z.is_empty() {
                        F::zero()
                    } else {
                        d_z.iter().copied().sum::<F>() / F::of(d_z.len() as f64)
                    };
                    code.active
                        .iter()
                        .zip(&d_z)
                        .map(|(&(j, _), &g)| (j, (g - mean) * inv_t))
                        .collect()
                }
                Activation::Entmax15 { temperature } => {
                    let inv_t = F::one() / F::of(temperature);
                    let gs: Vec<F> = code.active.iter().map(|&(_, z)| z.sqrt()).collect();
                    let g_sum = gs.iter().copied().sum::<F>();
                    let c = if g_sum > F::zero() {
                        gs.iter().zip(&d_z).map(|(&g, &dz)| g * dz).sum::<F>() / g_sum
                    } else {
                        F::zero()
                    };
                    code.active
                        .iter()
                        .zip(gs.iter().zip(&d_z))
                        .map(|(&(j, _), (&g, &dz))| (j, g * (dz - c) * inv_t))
                        .collect()
                }
            };
            if let (Some(z_aux), Some(d_e)) = (fw.aux_code.as_ref(), d_aux.as_ref()) {
                for &(j, _) in &z_aux.active {
                    d_pre.push((j, crate::sae::dot(params.atom(j as usize), d_e)));
                }
            }

            let mut d_u = vec![F::zero(); d];
            for &(j, g) in &d_pre {
                for (du, &w) in d_u.iter_mut().zip(params.enc_row(j as usize)) {
                    *du += g * w;
                }
            }
            TokenBackward {
                d_xhat,
                d_aux,
                d_high,
                d_pre,
                d_u,
            }
        })
        .collect();

    let mut grads = Gradients::zeros_like(params);
    for tb in &per_token {
        for &(j, g) in &tb.d_pre {
            grads.b_enc[j as usize] += g;
        }
        for r in 0..d {
            let mut g = tb.d_xhat[r] - tb.d_u[r];
            if let Some(dh) = &tb.d_high {
                g += dh[r];
            }
            grads.b_pre[r] += g;
        }
    }

    // Per-latent contribution lists, built in token order.
    let mut enc_lists: Vec<Vec<(u32, F)>> = vec![Vec::new(); h];
    for (i, tb) in per_token.iter().enumerate() {
        for &(j, g) in &tb.d_pre {
            enc_lists[j as usize].push((i as u32, g));
        }
    }
    grads
        .w_enc
        .par_chunks_mut(d)
        .zip(enc_lists.par_iter())
        .for_each(|(row, list)| {
            for &(i, g) in list {
                let x = batch.token(i as usize);
                for ((o, &xv), &b) in row.iter_mut().zip(x).zip(&params.b_pre) {
                    *o += g * (xv - b);
                }
            }
        });

    if !frozen_decoder {
        // (token, coefficient, 0 = x_hat / 1 = high / 2 = aux)
        let mut dec_lists: Vec<Vec<(u32, F, u8)>> = vec![Vec::new(); h];
        for (i, (code, fw)) in codes.iter().zip(forward).enumerate() {
            for &(j, v) in &code.active {
                dec_lists[j as usize].push((i as u32, v, 0));
                if split.is_some_and(|m| (j as usize) < m) {
                    dec_lists[j as usize].push((i as u32, v, 1));
                }
            }
            if let Some(z) = &fw.aux_code {
                for &(j, v) in &z.active {
                    dec_lists[j as usize].push((i as u32, v, 2));
                }
            }
        }
        grads
            .atoms
            .par_chunks_mut(d)
            .zip(dec_lists.par_iter())
            .for_each(|(row, list)| {
                for &(i, v, slot) in list {
                    let tb = &per_token[i as usize];
                    let src = match slot {
                        0 => &tb.d_xhat,
                        1 => tb.d_high.as_ref().expect("high residual"),
                        _ => tb.d_aux.as_ref().expect("aux residual"),
                    };
                    for (o, &g) in row.iter_mut().zip(src) {
                        *o += v * g;
                    }
                }
            });
    }

    if !grads.all_finite() {
        return Err(Error::NonFiniteGradient { term: "encoder/decoder" });
    }
    Ok(grads)
}

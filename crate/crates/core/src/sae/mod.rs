//! SAE parameters, sparse codes, activations and the encode/decode passes.

mod activation;
mod code;
mod params;

pub use activation::{
    batch_topk_activate, entmax15_activate, matryoshka_activate, sparsemax_activate,
    sparsemax_threshold, topk_activate, ENTMAX_BISECTION_ITERS,
};
pub use code::SparseCode;
pub use params::{Activation, SaeConfig, SaeParams};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;

/// `ReLU(W_e (x - b_pre) + b_e)`.
pub fn encode_preact<F: Real>(x: &[F], params: &SaeParams<F>) -> Result<Vec<F>> {
    let mut pre = raw_preact(x, params)?;
    pre.iter_mut().for_each(|v| *v = v.max(F::zero()));
    Ok(pre)
}

/// The affine stage `W_e (x - b_pre) + b_e` without the ReLU.
pub fn raw_preact<F: Real>(x: &[F], params: &SaeParams<F>) -> Result<Vec<F>> {
    let d = params.d_in();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "encoder input",
            expected: d,
            actual: x.len(),
        });
    }
    let centered: Vec<F> = x.iter().zip(&params.b_pre).map(|(&a, &b)| a - b).collect();
    Ok(params
        .w_enc
        .chunks_exact(d)
        .zip(&params.b_enc)
        .map(|(row, &b)| dot(row, &centered) + b)
        .collect())
}

/// How BatchTopK models select actives outside training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTopK {
    /// Plain per-token TopK with budget `k`.
    #[default]
    PerToken,
    /// BatchTopK over each clip's tokens.
    Batch,
}

/// Sparse code of one token under the model's own activation. BatchTopK
/// models fall back to per-token TopK.
pub fn encode<F: Real>(x: &[F], params: &SaeParams<F>) -> Result<SparseCode<F>> {
    let cfg = &params.config;
    match cfg.activation {
        Activation::TopK | Activation::BatchTopK => {
            Ok(topk_activate(&encode_preact(x, params)?, cfg.k)?)
        }
        Activation::Sparsemax { temperature } => {
            sparsemax_activate(&raw_preact(x, params)?, temperature)
        }
        Activation::Entmax15 { temperature } => {
            entmax15_activate(&raw_preact(x, params)?, temperature)
        }
    }
}

/// Encodes a `[n, D]` token matrix. With [`EvalTopK::Batch`] and a BatchTopK
/// model, selection is joint over consecutive groups of `group` tokens.
pub fn encode_tokens(
    data: &[f32],
    params: &SaeParams,
    mode: EvalTopK,
    group: usize,
) -> Result<Vec<SparseCode>> {
    let d = params.d_in();
    if !data.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            what: "token matrix",
            expected: d,
            actual: data.len() % d,
        });
    }
    let joint = mode == EvalTopK::Batch && params.config.activation == Activation::BatchTopK;
    if !joint {
        return data
            .par_chunks(d * 64)
            .map(|chunk| {
                chunk
                    .chunks_exact(d)
                    .map(|x| encode(x, params))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect());
    }
    let group = group.max(1);
    let h = params.n_latents();
    data.par_chunks(d * group)
        .map(|chunk| {
            let mut pre = Vec::with_capacity(chunk.len() / d * h);
            for x in chunk.chunks_exact(d) {
                pre.extend(encode_preact(x, params)?);
            }
            batch_topk_activate(&pre, h, params.config.k)
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

/// `x_hat = sum_i z_i W_d[:, i] + b_pre`, touching only active columns.
pub fn decode<F: Real>(code: &SparseCode<F>, params: &SaeParams<F>) -> Result<Vec<F>> {
    if code.n_latents != params.n_latents() {
        return Err(Error::DimensionMismatch {
            what: "sparse code",
            expected: params.n_latents(),
            actual: code.n_latents,
        });
    }
    let mut out = params.b_pre.clone();
    for &(i, v) in &code.active {
        for (o, &w) in out.iter_mut().zip(params.atom(i as usize)) {
            *o += v * w;
        }
    }
    Ok(out)
}

pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_params(d: usize) -> SaeParams<f64> {
        let mut p = SaeParams::zeros(SaeConfig::topk(d, d, d));
        for i in 0..d {
            p.w_enc[i * d + i] = 1.0;
            p.atoms[i * d + i] = 1.0;
        }
        p
    }

    #[test]
    fn preact_identity() {
        let p = identity_params(3);
        assert_eq!(encode_preact(&[1.0, -2.0, 3.0], &p).unwrap(), vec![1.0, 0.0, 3.0]);
    }

    #[test]
    fn preact_zero_map() {
        let p = SaeParams::<f64>::zeros(SaeConfig::topk(3, 5, 2));
        assert_eq!(encode_preact(&[4.0, -1.0, 9.0], &p).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn preact_with_biases() {
        let mut p = identity_params(3);
        p.b_pre = vec![1.0; 3];
        p.b_enc = vec![0.5; 3];
        assert_eq!(encode_preact(&[1.0, 1.0, 1.0], &p).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn preact_dimension_mismatch() {
        let p = identity_params(3);
        assert!(matches!(
            encode_preact(&[1.0, 2.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn decode_empty_is_bias() {
        let mut p = identity_params(3);
        p.b_pre = vec![0.1, 0.2, 0.3];
        let out = decode(&SparseCode::empty(3), &p).unwrap();
        assert_eq!(out, p.b_pre);
    }

    #[test]
    fn decode_single_column() {
        let mut p = SaeParams::<f64>::zeros(SaeConfig::topk(2, 3, 1));
        p.atoms = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let code = SparseCode::new(3, vec![(1, 1.0)]).unwrap();
        assert_eq!(decode(&code, &p).unwrap(), vec![3.0, 4.0]);
        assert!(decode(&SparseCode::<f64>::empty(4), &p).is_err());
    }
}

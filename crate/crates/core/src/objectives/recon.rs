use crate::error::{Error, Result};
use crate::real::Real;
use crate::sae::{topk_activate, SaeParams, SparseCode};

/// Mean over tokens of `||x - x_hat||^2`; both are `[B, D]` row-major.
pub fn recon_loss<F: Real>(x: &[F], x_hat: &[F], dim: usize) -> Result<F> {
    if x.len() != x_hat.len() || dim == 0 || !x.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            what: "reconstruction",
            expected: x.len(),
            actual: x_hat.len(),
        });
    }
    let b = x.len() / dim;
    if b == 0 {
        return Ok(F::zero());
    }
    let sum = x
        .chunks_exact(dim)
        .zip(x_hat.chunks_exact(dim))
        .map(|(a, b)| a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum::<F>())
        .sum::<F>();
    Ok(sum / F::of(b as f64))
}

/// Top-`k_aux` of the (post-ReLU) preactivations restricted to dead latents.
pub fn aux_reconstruction<F: Real>(preact: &[F], dead: &[bool], k_aux: usize) -> SparseCode<F> {
    let masked: Vec<F> = preact
        .iter()
        .zip(dead)
        .map(|(&v, &d)| if d { v } else { F::zero() })
        .collect();
    topk_activate(&masked, k_aux.max(1)).expect("k_aux >= 1")
}

/// Mean squared error of reconstructing the residual `e` (`[B, D]`) from the
/// dead latents alone: `mean ||e - W_d z_aux||^2`. Zero when nothing is dead.
pub fn aux_loss<F: Real>(
    residual: &[F],
    preacts: &[F],
    dead: &[bool],
    params: &SaeParams<F>,
    k_aux: usize,
) -> Result<F> {
    let (d, h) = (params.d_in(), params.n_latents());
    if dead.len() != h {
        return Err(Error::DimensionMismatch {
            what: "dead mask",
            expected: h,
            actual: dead.len(),
        });
    }
    if !residual.len().is_multiple_of(d) || preacts.len() != residual.len() / d * h {
        return Err(Error::DimensionMismatch {
            what: "aux preactivations",
            expected: residual.len() / d * h,
            actual: preacts.len(),
        });
    }
    if !dead.iter().any(|&x| x) || residual.is_empty() {
        return Ok(F::zero());
    }
    let b = residual.len() / d;
    let mut total = F::zero();
    for (e, pre) in residual.chunks_exact(d).zip(preacts.chunks_exact(h)) {
        let z = aux_reconstruction(pre, dead, k_aux);
        let mut q = e.to_vec();
        for &(i, v) in &z.active {
            for (qv, &w) in q.iter_mut().zip(params.atom(i as usize)) {
                *qv -= v * w;
            }
        }
        total += q.iter().map(|&v| v * v).sum::<F>();
    }
    Ok(total / F::of(b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::SaeConfig;

    #[test]
    fn recon_examples() {
        assert_eq!(recon_loss(&[1.0f64, 2.0], &[1.0, 2.0], 2).unwrap(), 0.0);
        assert_eq!(recon_loss(&[1.0f64, 0.0], &[0.0, 0.0], 2).unwrap(), 1.0);
        assert!(recon_loss(&[1.0f64, 0.0], &[0.0], 2).is_err());
    }

    #[test]
    fn recon_matches_two_loop_oracle() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut oracle = 0.0;
        for t in 0..4 {
            for j in 0..3 {
                oracle += (x[t * 3 + j] - y[t * 3 + j]).powi(2);
            }
        }
        oracle /= 4.0;
        let got = recon_loss(&x, &y, 3).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-6);
    }

    fn two_latent_params() -> SaeParams<f64> {
        let mut p = SaeParams::zeros(SaeConfig::topk(2, 2, 1));
        p.atoms = vec![1.0, 0.0, 0.6, 0.8];
        p
    }

    #[test]
    fn aux_zero_cases() {
        let p = two_latent_params();
        let pre = [1.0, 1.0];
        assert_eq!(aux_loss(&[3.0, 4.0], &pre, &[false, false], &p, 2).unwrap(), 0.0);
        assert_eq!(aux_loss(&[0.0, 0.0], &[0.0, 0.0], &[true, true], &p, 2).unwrap(), 0.0);
    }

    #[test]
    fn aux_strictly_improves_with_aligned_dead_latent() {
        let p = two_latent_params();
        let e = [3.0, 4.0]; // e / |e| = atom 1
        let loss = aux_loss(&e, &[0.0, 2.0], &[false, true], &p, 2).unwrap();
        assert!(loss < 25.0);
        // one-column least squares: residual after projecting with coef 2
        assert!((loss - ((3.0 - 1.2f64).powi(2) + (4.0 - 1.6f64).powi(2))).abs() < 1e-12);
    }
}

use crate::objectives::Gradients;

pub const NORM_TOLERANCE: f64 = 1e-7;
use crate::real::Real;
use crate::sae::SaeParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F = f32> {
    pub m: Gradients<F>,
    pub v: Gradients<F>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &SaeParams<F>) -> Self {
        AdamState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
        }
    }
}

fn update<F: Real>(p: &mut [F], g: &[F], m: &mut [F], v: &mut [F], cfg: &AdamConfig, t: u64) {
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let c1 = F::of(1.0 - cfg.beta1.powi(t as i32));
    let c2 = F::of(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (F::of(cfg.lr), F::of(cfg.eps));
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One bias-corrected Adam update followed by decoder renormalisation. With
/// a frozen decoder neither the decoder update nor the renormalisation runs.
pub fn adam_step<F: Real>(
    params: &mut SaeParams<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
    frozen_decoder: bool,
) {
    state.t += 1;
    let t = state.t;
    update(&mut params.w_enc, &grads.w_enc, &mut state.m.w_enc, &mut state.v.w_enc, cfg, t);
    update(&mut params.b_enc, &grads.b_enc, &mut state.m.b_enc, &mut state.v.b_enc, cfg, t);
    update(&mut params.b_pre, &grads.b_pre, &mut state.m.b_pre, &mut state.v.b_pre, cfg, t);
    if !frozen_decoder {
        update(&mut params.atoms, &grads.atoms, &mut state.m.atoms, &mut state.v.atoms, cfg, t);
        renormalize_decoder(params);
    }
}

/// Scales every decoder column to unit norm and multiplies the matching
/// encoder row and bias by the old norm, so `W_d z` is unchanged for the
/// positively homogeneous activations. Columns already within
/// [`NORM_TOLERANCE`] of unit norm are left alone.
pub fn renormalize_decoder<F: Real>(params: &mut SaeParams<F>) {
    let d = params.d_in();
    for ((atom, row), b) in params
        .atoms
        .chunks_exact_mut(d)
        .zip(params.w_enc.chunks_exact_mut(d))
        .zip(params.b_enc.iter_mut())
    {
        let norm = atom.iter().map(|&v| v * v).sum::<F>().sqrt();
        if !(norm > F::zero())
            || !norm.is_finite()
            || (norm.to_f64_lossy() - 1.0).abs() <= NORM_TOLERANCE
        {
            continue;
        }
        atom.iter_mut().for_each(|v| *v /= norm);
        row.iter_mut().for_each(|v| *v *= norm);
        *b *= norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sae::SaeConfig;

    fn params() -> SaeParams<f64> {
        SaeParams::<f32>::init(SaeConfig::topk(3, 4, 2), &[0.0; 3], 7)
            .unwrap()
            .cast()
    }

    #[test]
    fn first_step_moves_lr_per_coordinate() {
        let mut p = params();
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        g.b_enc.iter_mut().for_each(|v| *v = 0.37);
        g.b_pre.iter_mut().for_each(|v| *v = -5.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default(), true);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for (a, b) in p.b_enc.iter().zip(&before.b_enc) {
            assert!(((b - a) - 1e-3 * 0.37 / (0.37 + 1e-8)).abs() < 1e-12);
        }
        for (a, b) in p.b_pre.iter().zip(&before.b_pre) {
            assert!(((a - b) - 1e-3 * 5.0 / (5.0 + 1e-8)).abs() < 1e-12);
        }
        assert_eq!(p.atoms, before.atoms);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = params();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default(), false);
        assert_eq!(p, before);
    }

    #[test]
    fn renormalisation_preserves_reconstruction() {
        let mut p = params();
        for (i, v) in p.atoms.iter_mut().enumerate() {
            *v *= 1.0 + i as f64 * 0.1;
        }
        let x = [0.3, -0.2, 0.9];
        let before = crate::sae::decode(&crate::sae::encode(&x, &p).unwrap(), &p).unwrap();
        renormalize_decoder(&mut p);
        assert!(p.max_column_norm_error() < 1e-12);
        let after = crate::sae::decode(&crate::sae::encode(&x, &p).unwrap(), &p).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

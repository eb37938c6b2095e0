use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "batch_topk")]
    BatchTopK,
    Sparsemax {
        temperature: f64,
    },
    #[serde(rename = "entmax15")]
    Entmax15 {
        temperature: f64,
    },
}

impl Activation {
    pub fn is_simplex(&self) -> bool {
        matches!(self, Activation::Sparsemax { .. } | Activation::Entmax15 { .. })
    }
}

/// Architecture of an SAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeConfig {
    pub d_in: usize,
    pub n_latents: usize,
    pub k: usize,
    pub activation: Activation,
    /// Latents `[0, split)` form the Matryoshka high-level group.
    #[serde(default)]
    pub matryoshka_split: Option<usize>,
}

impl SaeConfig {
    pub fn topk(d_in: usize, n_latents: usize, k: usize) -> Self {
        SaeConfig {
            d_in,
            n_latents,
            k,
            activation: Activation::TopK,
            matryoshka_split: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.n_latents == 0 {
            return Err(Error::InvalidConfig("d_in and n_latents must be >= 1".into()));
        }
        if self.k < 1 || self.k > self.n_latents {
            return Err(Error::InvalidConfig(format!(
                "k = {} must lie in [1, {}]",
                self.k, self.n_latents
            )));
        }
        if let Some(m) = self.matryoshka_split {
            if m == 0 || m >= self.n_latents {
                return Err(Error::InvalidConfig(format!(
                    "matryoshka split {m} must lie in (0, {})",
                    self.n_latents
                )));
            }
        }
        match self.activation {
            Activation::Sparsemax { temperature } | Activation::Entmax15 { temperature }
                if !(temperature > 0.0 && temperature.is_finite()) =>
            {
                Err(Error::InvalidConfig(format!(
                    "temperature {temperature} must be > 0"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Split index for a fraction of the dictionary, e.g. 0.2 of 6144 -> 1228.
    pub fn split_for_fraction(n_latents: usize, fraction: f64) -> usize {
        (fraction * n_latents as f64).floor() as usize
    }
}

/// Encoder and decoder weights. Decoder columns are stored contiguously as
/// `atoms[i*D..(i+1)*D] = W_d[:, i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams<F = f32> {
    pub config: SaeConfig,
    /// `[H, D]` row-major.
    pub w_enc: Vec<F>,
    pub b_enc: Vec<F>,
    pub b_pre: Vec<F>,
    /// `[H, D]`: decoder columns.
    pub atoms: Vec<F>,
}

impl<F: Real> SaeParams<F> {
    pub fn zeros(config: SaeConfig) -> Self {
        let (d, h) = (config.d_in, config.n_latents);
        SaeParams {
            config,
            w_enc: vec![F::zero(); h * d],
            b_enc: vec![F::zero(); h],
            b_pre: vec![F::zero(); d],
            atoms: vec![F::zero(); h * d],
        }
    }

    /// Unit-norm Gaussian decoder columns, tied encoder `W_e = W_d^T`, zero
    /// encoder bias and `b_pre` set to the data mean.
    pub fn init(config: SaeConfig, data_mean: &[f64], seed: u64) -> Result<Self> {
        config.validate()?;
        if data_mean.len() != config.d_in {
            return Err(Error::DimensionMismatch {
                what: "data mean",
                expected: config.d_in,
                actual: data_mean.len(),
            });
        }
        let mut rng = stream(seed, purpose::INIT);
        let mut p = Self::zeros(config);
        let d = p.d_in();
        let raw: Vec<f64> = (0..p.atoms.len()).map(|_| rng.sample(StandardNormal)).collect();
        for (dst, src) in p.atoms.chunks_exact_mut(d).zip(raw.chunks_exact(d)) {
            let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = F::of(v / norm);
            }
        }
        p.w_enc = p.atoms.clone();
        p.b_pre = data_mean.iter().map(|&m| F::of(m)).collect();
        Ok(p)
    }

    pub fn d_in(&self) -> usize {
        self.config.d_in
    }

    pub fn n_latents(&self) -> usize {
        self.config.n_latents
    }

    pub fn atom(&self, i: usize) -> &[F] {
        let d = self.d_in();
        &self.atoms[i * d..(i + 1) * d]
    }

    pub fn enc_row(&self, i: usize) -> &[F] {
        let d = self.d_in();
        &self.w_enc[i * d..(i + 1) * d]
    }

    /// Decoder as `[D, H]` row-major.
    pub fn w_dec_row_major(&self) -> Vec<F> {
        let (d, h) = (self.d_in(), self.n_latents());
        let mut out = vec![F::zero(); d * h];
        for i in 0..h {
            for (r, &v) in self.atom(i).iter().enumerate() {
                out[r * h + i] = v;
            }
        }
        out
    }

    pub fn set_w_dec_row_major(&mut self, w_dec: &[F]) {
        let (d, h) = (self.d_in(), self.n_latents());
        for i in 0..h {
            for r in 0..d {
                self.atoms[i * d + r] = w_dec[r * h + i];
            }
        }
    }

    /// Largest deviation of a decoder column norm from 1.
    pub fn max_column_norm_error(&self) -> f64 {
        self.atoms
            .chunks_exact(self.d_in())
            .map(|a| {
                let n = a.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
                (n - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (d, h) = (self.d_in(), self.n_latents());
        let shapes = [
            ("w_enc", self.w_enc.len(), h * d),
            ("b_enc", self.b_enc.len(), h),
            ("b_pre", self.b_pre.len(), d),
            ("w_dec", self.atoms.len(), h * d),
        ];
        for (what, actual, expected) in shapes {
            if actual != expected {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    actual,
                });
            }
        }
        let all = self.w_enc.iter().chain(&self.b_enc).chain(&self.b_pre).chain(&self.atoms);
        if let Some(index) = all.into_iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> SaeParams<G> {
        let c = |v: &Vec<F>| v.iter().map(|x| G::of(x.to_f64_lossy())).collect();
        SaeParams {
            config: self.config.clone(),
            w_enc: c(&self.w_enc),
            b_enc: c(&self.b_enc),
            b_pre: c(&self.b_pre),
            atoms: c(&self.atoms),
        }
    }

    pub fn n_params(&self) -> usize {
        self.w_enc.len() + self.b_enc.len() + self.b_pre.len() + self.atoms.len()
    }
}

//! Synthetic spatio-temporal features with a planted dictionary.
//!
//! Each (clip, patch) draws a fixed set of active atoms; their coefficients
//! evolve across frames as a variance-stationary AR(1) process, so the raw
//! lag-1 autocorrelation of every coefficient is exactly `ar_coeff`. Atom 0
//! is always active and its mean coefficient depends on the clip label.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FeatureTensor;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub true_dict_size: usize,
    pub k_true: usize,
    pub ar_coeff: f64,
    pub noise_std: f64,
    /// Spread of the class-conditional mean of atom 0, in coefficient units.
    pub class_signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 200,
            frames: 8,
            patches: 16,
            dim: 32,
            n_classes: 4,
            true_dict_size: 64,
            k_true: 4,
            ar_coeff: 0.8,
            noise_std: 0.0,
            class_signal: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_clips", self.n_clips),
            ("frames", self.frames),
            ("patches", self.patches),
            ("dim", self.dim),
            ("true_dict_size", self.true_dict_size),
            ("k_true", self.k_true),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.k_true > self.true_dict_size {
            return Err(Error::invalid(format!(
                "k_true {} exceeds true_dict_size {}",
                self.k_true, self.true_dict_size
            )));
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return Err(Error::invalid(format!(
                "ar_coeff {} outside [0, 1)",
                self.ar_coeff
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and >= 0"));
        }
        if !self.class_signal.is_finite() {
            return Err(Error::invalid("class_signal must be finite"));
        }
        Ok(())
    }

    fn class_mean(&self, label: usize) -> f64 {
        if self.n_classes <= 1 {
            0.0
        } else {
            self.class_signal * (2.0 * label as f64 / (self.n_classes - 1) as f64 - 1.0)
        }
    }
}

pub fn synth_clips(cfg: &SynthConfig) -> Result<FeatureTensor> {
    synth_clips_with_dictionary(cfg).map(|(t, _)| t)
}

/// Like [`synth_clips`], also returning the planted unit-norm atoms as a
/// `[true_dict_size, dim]` row-major matrix.
pub fn synth_clips_with_dictionary(cfg: &SynthConfig) -> Result<(FeatureTensor, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, purpose::SYNTH);
    let d = cfg.dim;

    let mut atoms: Vec<f64> = (0..cfg.true_dict_size * d)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    for atom in atoms.chunks_exact_mut(d) {
        let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
        atom.iter_mut().for_each(|v| *v /= norm);
    }

    let rho = cfg.ar_coeff;
    let innovation = (1.0 - rho * rho).sqrt();
    let (t_len, p_len) = (cfg.frames, cfg.patches);
    let mut data = vec![0.0f32; cfg.n_clips * t_len * p_len * d];
    let mut labels = Vec::with_capacity(cfg.n_clips);
    let mut token = vec![0.0f64; d];
    let mut coeffs = vec![0.0f64; cfg.k_true];

    for c in 0..cfg.n_clips {
        let label = if cfg.n_classes > 0 { c % cfg.n_classes } else { 0 };
        labels.push(label as u32);
        let mean0 = cfg.class_mean(label);
        for p in 0..p_len {
            // atom 0 always, plus k_true - 1 distinct others
            let mut active = vec![0usize];
            if cfg.k_true > 1 {
                active.extend(
                    sample(&mut rng, cfg.true_dict_size - 1, cfg.k_true - 1)
                        .into_iter()
                        .map(|i| i + 1),
                );
            }
            for t in 0..t_len {
                for c_j in coeffs.iter_mut() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *c_j = if t == 0 { eps } else { rho * *c_j + innovation * eps };
                }
                token.iter_mut().for_each(|v| *v = 0.0);
                for (j, &a) in active.iter().enumerate() {
                    let coef = coeffs[j] + if a == 0 { mean0 } else { 0.0 };
                    for (v, &g) in token.iter_mut().zip(&atoms[a * d..(a + 1) * d]) {
                        *v += coef * g;
                    }
                }
                let base = ((c * t_len + t) * p_len + p) * d;
                for (i, v) in token.iter().enumerate() {
                    let noise = if cfg.noise_std > 0.0 {
                        cfg.noise_std * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    data[base + i] = (v + noise) as f32;
                }
            }
        }
    }

    let labels = (cfg.n_classes > 0).then_some(labels);
    let tensor = FeatureTensor::new(cfg.n_clips, t_len, p_len, d, data, labels)?;
    Ok((tensor, atoms))
}

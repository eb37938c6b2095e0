//! Loss terms and their per-variant composition.

mod composite;
mod infonce;
mod pairs;
mod recon;

pub use composite::{
    evaluate, total_loss, EvalOptions, Evaluation, Gradients, LossBreakdown,
};
pub use infonce::{infonce, infonce_pairs};
pub use pairs::{raster_pairs, spatial_pairs, temporal_pairs, PairSet};
pub use recon::{aux_loss, aux_reconstruction, recon_loss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Flat tokens, reconstruction plus auxiliary loss only.
    Standard,
    /// Adds InfoNCE between the same patch in consecutive frames.
    Temporal,
    /// Temporal plus an independent horizontal-neighbour spatial term.
    Separate,
    /// One InfoNCE over the raster-serialised `(T, P)` sequence.
    Raster,
}

impl Variant {
    pub fn needs_clips(self) -> bool {
        self != Variant::Standard
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Temporal => "temporal",
            Variant::Separate => "separate",
            Variant::Raster => "raster",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Variant::Standard),
            "temporal" => Ok(Variant::Temporal),
            "separate" => Ok(Variant::Separate),
            "raster" => Ok(Variant::Raster),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// Loss coefficients for one training variant. Defaults: `lambda_t = 0.1`,
/// `lambda_s = 0.05`, `lambda_r = lambda_t`, `tau = 0.1`, `alpha_aux = 0.03`,
/// `alpha_mat = 0.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantConfig {
    pub variant: Variant,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub lambda_r: f64,
    pub tau: f64,
    pub alpha_aux: f64,
    /// Weight of the high-group reconstruction; only used when the model has
    /// a Matryoshka split. Zero disables it.
    pub alpha_mat: f64,
    /// Patches per row for spatial pairing; `None` means a square grid.
    pub frame_width: Option<usize>,
    /// Dead-latent budget of the auxiliary loss; `None` means `2k`.
    pub aux_k: Option<usize>,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            variant: Variant::Standard,
            lambda_t: 0.1,
            lambda_s: 0.05,
            lambda_r: 0.1,
            tau: 0.1,
            alpha_aux: 0.03,
            alpha_mat: 0.1,
            frame_width: None,
            aux_k: None,
        }
    }
}

impl VariantConfig {
    pub fn of(variant: Variant) -> Self {
        VariantConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau {} must be > 0", self.tau)));
        }
        let coeffs = [
            ("lambda_t", self.lambda_t),
            ("lambda_s", self.lambda_s),
            ("lambda_r", self.lambda_r),
            ("alpha_aux", self.alpha_aux),
            ("alpha_mat", self.alpha_mat),
        ];
        for (name, v) in coeffs {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.aux_k == Some(0) {
            return Err(Error::invalid("aux_k must be at least 1"));
        }
        Ok(())
    }

    /// Row width used for spatial pairs on frames of `patches` tokens.
    pub fn frame_width_for(&self, patches: usize) -> Result<usize> {
        match self.frame_width {
            Some(w) => Ok(w),
            None => {
                let w = (patches as f64).sqrt().round() as usize;
                if w * w == patches {
                    Ok(w)
                } else {
                    Err(Error::invalid(format!(
                        "{patches} patches is not a square grid; set frame_width"
                    )))
                }
            }
        }
    }
}

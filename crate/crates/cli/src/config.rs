//! JSON run configuration. Every section rejects unknown keys; command-line
//! flags override whatever the file sets.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use stsae_core::analysis::RetrievalSpec;
use stsae_core::metrics::ReportOptions;
use stsae_core::sae::{Activation, EvalTopK, SaeConfig};
use stsae_core::{SynthConfig, TrainConfig};

use crate::usage;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub synth: SynthConfig,
    pub sae: SaeSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub retrieval: RetrievalSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum ActivationKind {
    Topk,
    BatchTopk,
    Sparsemax,
    Entmax15,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeSection {
    /// `H = expansion * D` unless `n_latents` is set.
    pub expansion: usize,
    pub n_latents: Option<usize>,
    pub k: usize,
    pub activation: ActivationKind,
    pub temperature: f64,
    pub matryoshka: bool,
    /// Fraction of the dictionary in the Matryoshka high group.
    pub split: f64,
}

impl Default for SaeSection {
    fn default() -> Self {
        SaeSection {
            expansion: 8,
            n_latents: None,
            k: 64,
            activation: ActivationKind::Topk,
            temperature: 1.0,
            matryoshka: false,
            split: 0.2,
        }
    }
}

impl SaeSection {
    /// Architecture for inputs of width `d_in`. Matryoshka grouping trains
    /// with BatchTopK.
    pub fn resolve(&self, d_in: usize) -> anyhow::Result<SaeConfig> {
        let n_latents = self.n_latents.unwrap_or(self.expansion * d_in);
        let activation = match (self.activation, self.matryoshka) {
            (ActivationKind::Topk | ActivationKind::BatchTopk, true) => Activation::BatchTopK,
            (ActivationKind::Topk, false) => Activation::TopK,
            (ActivationKind::BatchTopk, false) => Activation::BatchTopK,
            (ActivationKind::Sparsemax, _) => Activation::Sparsemax {
                temperature: self.temperature,
            },
            (ActivationKind::Entmax15, _) => Activation::Entmax15 {
                temperature: self.temperature,
            },
        };
        if self.matryoshka && !(self.split > 0.0 && self.split < 1.0) {
            return Err(usage(format!("split {} must lie in (0, 1)", self.split)));
        }
        let cfg = SaeConfig {
            d_in,
            n_latents,
            k: self.k,
            activation,
            matryoshka_split: self
                .matryoshka
                .then(|| SaeConfig::split_for_fraction(n_latents, self.split)),
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    Ema,
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub eval_topk: Option<EvalTopK>,
    pub smooth: Smoothing,
    pub alpha: f32,
    pub report: ReportOptions,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            eval_topk: None,
            smooth: Smoothing::None,
            alpha: 0.5,
            report: ReportOptions::default(),
        }
    }
}

pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// First of the flag value and the config value, or a usage error.
pub fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| usage(format!("--{name} is required (flag or config)")))
}

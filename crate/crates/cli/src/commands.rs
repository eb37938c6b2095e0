//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::json;
use stsae_core::analysis::{
    ablation_csv, ablation_experiment, ema_smooth_codes, retrieval_experiment,
    temporal_union_topk, AblationMode, AblationSpec,
};
use stsae_core::features::{read_embeddings, read_features, synth_clips, write_atomic, write_features};
use stsae_core::metrics::{lag1_raw, pool_codes, report, EvalContext, FeatureSpace, Lag1Mode, MetricsReport};
use stsae_core::sae::{encode_tokens, raw_preact, Activation, EvalTopK};
use stsae_core::trainer::{load_checkpoint, save_checkpoint, train};
use stsae_core::{EmbeddingKind, FeatureTensor, SaeParams, SparseCode, TrainConfig, Variant};

use crate::config::{self, ActivationKind, EvalSection, RunConfig, Smoothing};
use crate::sweep::{self, SweepArgs};
use crate::{usage, validation};

#[derive(Parser, Debug)]
#[command(name = "stsae", version, about = "Spatio-temporal sparse autoencoders on video features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic AR(1) feature file.
    Synth(SynthArgs),
    /// Train an SAE and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Encode a feature file and emit the metric report as JSON.
    Eval(EvalArgs),
    /// Train and evaluate a grid of variants, weights, temperatures and seeds.
    Sweep(SweepArgs),
    /// Causal feature ablation against a linear probe.
    Ablate(AblateArgs),
    /// Ridge video-to-text retrieval from pooled codes.
    Retrieve(RetrieveArgs),
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Retrieve(a) => cmd_retrieve(a),
    }
}

/// Parses a snake_case enum name through its serde representation.
pub fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: stsae_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<AblationMode, String> {
    s.parse().map_err(|e: stsae_core::Error| e.to_string())
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(Into::into),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Number of planted dictionary atoms.
    #[arg(long)]
    dict_size: Option<usize>,
    /// Active planted atoms per patch.
    #[arg(long)]
    k_true: Option<usize>,
    /// AR(1) coefficient in [0, 1).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    class_signal: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let rc = config::load(a.config.as_deref())?;
    let mut s = rc.synth.clone();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag { s.$field = v; })*
        };
    }
    set!(clips => n_clips, frames => frames, patches => patches, dim => dim,
         classes => n_classes, dict_size => true_dict_size, k_true => k_true,
         rho => ar_coeff, noise => noise_std, class_signal => class_signal, seed => seed);
    let out = config::required(a.out, &rc.out, "out")?;
    s.validate().map_err(validation)?;
    let tensor = synth_clips(&s)?;
    write_features(&tensor, &out)?;
    let lag1 = if s.frames >= 3 {
        format!("{:.4}", lag1_raw(&tensor, Lag1Mode::FramePooled)?.mean)
    } else {
        "n/a".to_string()
    };
    println!(
        "wrote {}: clips={} frames={} patches={} dim={} classes={} raw_lag1={}",
        out.display(),
        s.n_clips,
        s.frames,
        s.patches,
        s.dim,
        s.n_classes,
        lag1
    );
    Ok(())
}

// ---------------------------------------------------------------- train

/// Architecture flags.
#[derive(Args, Debug, Default)]
pub struct SaeArgs {
    /// Dictionary size as a multiple of the input width.
    #[arg(long, conflicts_with = "latents")]
    expansion: Option<usize>,
    /// Explicit dictionary size.
    #[arg(long)]
    latents: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationKind>,
    /// Sparsemax / entmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Nested high/low groups; implies BatchTopK selection.
    #[arg(long)]
    matryoshka: bool,
    /// Fraction of latents in the high group.
    #[arg(long)]
    split: Option<f64>,
}

impl SaeArgs {
    pub fn apply(&self, rc: &mut RunConfig) {
        let s = &mut rc.sae;
        if let Some(v) = self.expansion {
            s.expansion = v;
            s.n_latents = None;
        }
        if self.latents.is_some() {
            s.n_latents = self.latents;
        }
        if let Some(v) = self.k {
            s.k = v;
        }
        if let Some(v) = self.activation {
            s.activation = v;
        }
        if let Some(v) = self.temperature {
            s.temperature = v;
        }
        if self.matryoshka {
            s.matryoshka = true;
        }
        if let Some(v) = self.split {
            s.split = v;
        }
    }
}

/// Objective and optimiser flags.
#[derive(Args, Debug, Default)]
pub struct TrainOpts {
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha_aux: Option<f64>,
    #[arg(long)]
    alpha_mat: Option<f64>,
    /// Row width of the patch grid for spatial pairs.
    #[arg(long)]
    frame_width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    batch_clips: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Batches without firing before a latent counts as dead.
    #[arg(long)]
    dead_after: Option<usize>,
    /// Train only the encoder against the initial decoder.
    #[arg(long)]
    frozen_decoder: bool,
    /// Write zeros in the log's timing column for byte-stable logs.
    #[arg(long)]
    no_timing: bool,
}

impl TrainOpts {
    pub fn apply(&self, rc: &mut RunConfig) {
        let t = &mut rc.train;
        let v = &mut t.variant_cfg;
        macro_rules! set {
            ($obj:ident: $($flag:ident => $field:ident),*) => {
                $(if let Some(x) = self.$flag { $obj.$field = x; })*
            };
        }
        set!(v: variant => variant, lambda_t => lambda_t, lambda_s => lambda_s,
             lambda_r => lambda_r, tau => tau, alpha_aux => alpha_aux, alpha_mat => alpha_mat);
        if self.frame_width.is_some() {
            v.frame_width = self.frame_width;
        }
        set!(t: epochs => epochs, batch_tokens => batch_tokens, batch_clips => batch_clips,
             lr => lr, seed => seed, dead_after => dead_after_batches);
        if self.frozen_decoder {
            t.frozen_decoder = true;
        }
        if self.no_timing {
            t.record_timing = false;
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input STSF file.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output STSC checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    sae: SaeArgs,
    #[command(flatten)]
    train: TrainOpts,
}

pub fn validate_train(rc: &RunConfig, d_in: usize) -> anyhow::Result<stsae_core::SaeConfig> {
    let sae = rc.sae.resolve(d_in)?;
    rc.train.validate().map_err(validation)?;
    Ok(sae)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut rc = config::load(a.config.as_deref())?;
    a.sae.apply(&mut rc);
    a.train.apply(&mut rc);
    let features = config::required(a.features, &rc.features, "features")?;
    let out = config::required(a.out, &rc.checkpoint, "out")?;
    let log_path = a
        .log
        .or_else(|| rc.log.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", out.display())));
    let data = read_features(&features)?;
    let sae = validate_train(&rc, data.dim)?;
    let mut tc = rc.train.clone();
    tc.checkpoint = None;
    let (params, log) = train(&data, &sae, &tc)?;
    save_checkpoint(&params, &tc, &out)?;
    log.write_csv(&log_path)?;
    let last = log.last();
    println!(
        "wrote {} ({} steps, final loss {}, l0 {}, dead {}) and {}",
        out.display(),
        log.len(),
        last.map_or("n/a".into(), |r| format!("{:.6}", r.loss.total)),
        last.map_or("n/a".into(), |r| format!("{:.2}", r.l0_mean)),
        last.map_or(0, |r| r.dead),
        log_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- encoding

/// Codes used for evaluation: the model's encoder, optionally smoothed.
pub fn eval_codes(
    data: &FeatureTensor,
    params: &SaeParams,
    mode: EvalTopK,
    smooth: Smoothing,
    alpha: f32,
) -> anyhow::Result<Vec<SparseCode>> {
    let per_clip = data.tokens_per_clip();
    match smooth {
        Smoothing::None => Ok(encode_tokens(&data.data, params, mode, per_clip)?),
        Smoothing::Ema => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(usage(format!("--alpha {alpha} must lie in (0, 1]")));
            }
            let codes = encode_tokens(&data.data, params, mode, per_clip)?;
            Ok(ema_smooth_codes(&codes, data.frames, data.patches, alpha)?)
        }
        Smoothing::Union => {
            if !matches!(params.config.activation, Activation::TopK | Activation::BatchTopK) {
                return Err(usage("--smooth union needs a TopK-family activation"));
            }
            let h = params.n_latents();
            let clips: Vec<Vec<SparseCode>> = (0..data.n_clips)
                .into_par_iter()
                .map(|c| -> anyhow::Result<Vec<SparseCode>> {
                    let mut pre = Vec::with_capacity(per_clip * h);
                    for x in data.clip(c).chunks_exact(data.dim) {
                        pre.extend(raw_preact(x, params)?);
                    }
                    Ok(temporal_union_topk(&pre, data.frames, data.patches, h, params.config.k)?)
                })
                .collect::<anyhow::Result<_>>()?;
            Ok(clips.concat())
        }
    }
}

fn load_model(checkpoint: &Path, features: &Path) -> anyhow::Result<(SaeParams, TrainConfig, FeatureTensor)> {
    let (params, tc) =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let data = read_features(features).with_context(|| format!("loading {}", features.display()))?;
    if data.dim != params.d_in() {
        return Err(usage(format!(
            "checkpoint expects D={} but {} has D={}",
            params.d_in(),
            features.display(),
            data.dim
        )));
    }
    Ok((params, tc, data))
}

/// Flags shared by every command that encodes a feature file.
#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// BatchTopK selection at evaluation: per_token or batch (per clip).
    #[arg(long, value_parser = serde_enum::<EvalTopK>)]
    eval_topk: Option<EvalTopK>,
    #[arg(long, value_enum)]
    smooth: Option<Smoothing>,
    /// EMA coefficient for `--smooth ema`.
    #[arg(long)]
    alpha: Option<f32>,
    /// Seed for the probe split and sampled statistics.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Encoded {
    rc: RunConfig,
    checkpoint: PathBuf,
    features: PathBuf,
    params: SaeParams,
    train: TrainConfig,
    data: FeatureTensor,
    codes: Vec<SparseCode>,
    eval: EvalSection,
}

impl EncodeArgs {
    fn run(&self) -> anyhow::Result<Encoded> {
        let rc = config::load(self.config.as_deref())?;
        let checkpoint = config::required(self.checkpoint.clone(), &rc.checkpoint, "checkpoint")?;
        let features = config::required(self.features.clone(), &rc.features, "features")?;
        let mut eval = rc.eval.clone();
        if self.eval_topk.is_some() {
            eval.eval_topk = self.eval_topk;
        }
        if let Some(s) = self.smooth {
            eval.smooth = s;
        }
        if let Some(a) = self.alpha {
            eval.alpha = a;
        }
        if let Some(s) = self.seed {
            eval.report.seed = s;
        }
        let (params, train, data) = load_model(&checkpoint, &features)?;
        let mode = eval.eval_topk.unwrap_or(train.eval_topk_mode);
        eval.eval_topk = Some(mode);
        let codes = eval_codes(&data, &params, mode, eval.smooth, eval.alpha)?;
        Ok(Encoded {
            rc,
            checkpoint,
            features,
            params,
            train,
            data,
            codes,
            eval,
        })
    }
}

// ---------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    enc: EncodeArgs,
    /// Per-clip similarity embeddings (STSE) for monosemanticity.
    #[arg(long)]
    sim: Option<PathBuf>,
    #[arg(long, value_parser = serde_enum::<Lag1Mode>)]
    lag1_mode: Option<Lag1Mode>,
    /// Skip the linear probes.
    #[arg(long)]
    no_probe: bool,
}

pub fn evaluate_codes(
    data: &FeatureTensor,
    codes: &[SparseCode],
    params: &SaeParams,
    sim: Option<&Path>,
    eval: &EvalSection,
    echo: serde_json::Value,
) -> anyhow::Result<MetricsReport> {
    let sim = sim.map(read_embeddings).transpose()?;
    let ctx = EvalContext::new(data, codes, params, sim.as_ref())?;
    Ok(report(&ctx, &eval.report, echo)?)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut e = a.enc.run()?;
    if let Some(m) = a.lag1_mode {
        e.eval.report.lag1_mode = m;
    }
    if a.no_probe {
        e.eval.report.run_probe = false;
    }
    let echo = json!({
        "checkpoint": e.checkpoint,
        "features": e.features,
        "sim": a.sim,
        "sae": e.params.config,
        "train": e.train,
        "eval": e.eval,
    });
    let rep = evaluate_codes(&e.data, &e.codes, &e.params, a.sim.as_deref(), &e.eval, echo)?;
    let out = a.enc.out.clone().or(e.rc.out.clone());
    write_or_print(out.as_deref(), &(serde_json::to_string_pretty(&rep)? + "\n"))
}

// ---------------------------------------------------------------- ablate / retrieve

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SpaceArg {
    /// Mean-pooled SAE codes.
    Sae,
    /// Mean-pooled Matryoshka high-group codes.
    High,
    /// Mean-pooled raw features.
    Raw,
}

fn pooled_space(e: &Encoded, space: SpaceArg) -> anyhow::Result<(Vec<f32>, usize, FeatureSpace)> {
    let per_clip = e.data.tokens_per_clip();
    let h = e.params.n_latents();
    Ok(match space {
        SpaceArg::Raw => (e.data.pooled(), e.data.dim, FeatureSpace::RawPooled),
        SpaceArg::Sae => (pool_codes(&e.codes, per_clip, h, None)?, h, FeatureSpace::SaePooled),
        SpaceArg::High => {
            let m = e
                .params
                .config
                .matryoshka_split
                .ok_or_else(|| usage("--space high needs a Matryoshka checkpoint"))?;
            (pool_codes(&e.codes, per_clip, h, Some(m))?, m, FeatureSpace::SaeHighGroup)
        }
    })
}

fn labels_of(data: &FeatureTensor) -> anyhow::Result<&[u32]> {
    data.labels
        .as_deref()
        .ok_or_else(|| usage("feature file has no labels"))
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    enc: EncodeArgs,
    /// Numbers of features to ablate.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,500")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "top,random", value_parser = parse_mode)]
    mode: Vec<AblationMode>,
    #[arg(long, value_enum, default_value = "sae")]
    space: SpaceArg,
    /// Variant column of the CSV; defaults to the checkpoint's variant.
    #[arg(long)]
    label: Option<String>,
}

fn cmd_ablate(a: AblateArgs) -> anyhow::Result<()> {
    let e = a.enc.run()?;
    let labels = labels_of(&e.data)?;
    let (pooled, nf, space) = pooled_space(&e, a.space)?;
    if let Some(&n) = a.n.iter().find(|&&n| n > nf) {
        return Err(usage(format!("--n {n} exceeds the {nf} available features")));
    }
    let spec = AblationSpec {
        ns: a.n.clone(),
        modes: a.mode.clone(),
        seed: e.eval.report.seed,
    };
    let (_, rows) = ablation_experiment(&pooled, nf, labels, space, e.eval.report.seed, &spec)
        .map_err(validation)?;
    let label = a.label.clone().unwrap_or_else(|| variant_label(&e.params, &e.train));
    let rows: Vec<_> = rows.into_iter().map(|r| (label.clone(), r)).collect();
    let out = a.enc.out.clone().or(e.rc.out.clone());
    write_or_print(out.as_deref(), &ablation_csv(&rows))
}

pub fn variant_label(params: &SaeParams, tc: &TrainConfig) -> String {
    let base = tc.variant_cfg.variant.name();
    if params.config.matryoshka_split.is_some() {
        format!("{base}+m")
    } else {
        base.to_string()
    }
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[command(flatten)]
    enc: EncodeArgs,
    /// Per-class text embeddings (STSE).
    #[arg(long)]
    text: PathBuf,
    /// Ridge penalty grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_enum, default_value = "sae")]
    space: SpaceArg,
}

fn cmd_retrieve(a: RetrieveArgs) -> anyhow::Result<()> {
    let e = a.enc.run()?;
    let labels = labels_of(&e.data)?;
    let classes = read_embeddings(&a.text)?;
    if classes.kind != EmbeddingKind::PerClass {
        return Err(usage(format!("{} is not a per-class embedding file", a.text.display())));
    }
    let mut spec = e.rc.retrieval.clone();
    if let Some(al) = &a.alphas {
        spec.alphas = al.clone();
    }
    if let Some(f) = a.folds {
        spec.folds = f;
    }
    spec.split_seed = e.eval.report.seed;
    spec.validate().map_err(validation)?;
    let (pooled, nf, _) = pooled_space(&e, a.space)?;
    let rep = retrieval_experiment(&pooled, nf, labels, &classes, &spec)?;
    let out = a.enc.out.clone().or(e.rc.out.clone());
    write_or_print(out.as_deref(), &(serde_json::to_string_pretty(&rep)? + "\n"))
}

//! Grid sweeps over variants, contrastive weights, temperatures and seeds.
//!
//! Each completed run is appended to the output CSV as soon as it finishes,
//! keyed by a hash of its fully resolved configuration. A rerun skips every
//! hash already present, then rewrites the file sorted by
//! `(variant, lambda, tau, seed)`.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};
use stsae_core::features::{read_features, write_atomic};
use stsae_core::metrics::{Lag1Mode, MetricsReport};
use stsae_core::trainer::train;
use stsae_core::{FeatureTensor, Variant};

use crate::commands::{eval_codes, evaluate_codes, serde_enum, validate_train, SaeArgs, TrainOpts};
use crate::config::{self, RunConfig};
use crate::usage;

pub const SWEEP_HEADER: &str = "variant,lambda,tau,seed,config_hash,r2,r2_pooled,lag1_mean,\
lag1_frac_below_03,l0_mean,dead_fraction,ms,purity_mean,jaccard_mean,probe_top1,high_probe_top1";

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Per-clip similarity embeddings for monosemanticity.
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Variants to sweep; a `+m` suffix adds Matryoshka grouping.
    #[arg(long, value_delimiter = ',', default_value = "standard,temporal,separate,raster")]
    variants: Vec<String>,
    /// Contrastive weights: lambda_t = lambda_r = lambda, lambda_s = lambda / 2.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.5")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,0.5")]
    taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, value_parser = serde_enum::<Lag1Mode>)]
    lag1_mode: Option<Lag1Mode>,
    /// Independent runs executed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sae: SaeArgs,
    #[command(flatten)]
    train: TrainOpts,
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub variant: Variant,
    pub matryoshka: bool,
    pub lambda: f64,
    pub tau: f64,
    pub seed: u64,
}

impl GridPoint {
    pub fn label(&self) -> String {
        let base = self.variant.name();
        if self.matryoshka {
            format!("{base}+m")
        } else {
            base.to_string()
        }
    }

    fn configure(&self, base: &RunConfig) -> RunConfig {
        let mut rc = base.clone();
        rc.sae.matryoshka = self.matryoshka;
        let v = &mut rc.train.variant_cfg;
        v.variant = self.variant;
        if self.variant != Variant::Standard {
            v.lambda_t = self.lambda;
            v.lambda_s = self.lambda / 2.0;
            v.lambda_r = self.lambda;
            v.tau = self.tau;
        }
        rc.train.seed = self.seed;
        rc.eval.report.seed = self.seed;
        rc
    }
}

pub fn parse_variant_label(s: &str) -> anyhow::Result<(Variant, bool)> {
    let (name, m) = match s.strip_suffix("+m") {
        Some(n) => (n, true),
        None => (s, false),
    };
    let v: Variant = name.parse().map_err(|e: stsae_core::Error| usage(e.to_string()))?;
    Ok((v, m))
}

/// Cross product of the grid. The standard variant has no contrastive term,
/// so it contributes one point per seed with `lambda = tau = 0`.
pub fn grid(variants: &[String], lambdas: &[f64], taus: &[f64], seeds: &[u64]) -> anyhow::Result<Vec<GridPoint>> {
    let mut out = Vec::new();
    for label in variants {
        let (variant, matryoshka) = parse_variant_label(label)?;
        let weights: Vec<(f64, f64)> = if variant == Variant::Standard {
            vec![(0.0, 0.0)]
        } else {
            lambdas
                .iter()
                .flat_map(|&l| taus.iter().map(move |&t| (l, t)))
                .collect()
        };
        for &(lambda, tau) in &weights {
            for &seed in seeds {
                out.push(GridPoint {
                    variant,
                    matryoshka,
                    lambda,
                    tau,
                    seed,
                });
            }
        }
    }
    Ok(out)
}

/// Hex SHA-256 of the canonical JSON of everything that determines a run.
pub fn config_hash(rc: &RunConfig, features: &Path, sim: Option<&Path>) -> anyhow::Result<String> {
    let doc = json!({
        "features": features,
        "sim": sim,
        "sae": rc.sae,
        "train": rc.train,
        "eval": rc.eval,
    });
    let digest = Sha256::digest(serde_json::to_vec(&doc)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

fn row(p: &GridPoint, hash: &str, r: &MetricsReport) -> String {
    [
        p.label(),
        format!("{}", p.lambda),
        format!("{}", p.tau),
        p.seed.to_string(),
        hash.to_string(),
        format!("{:.6}", r.r2),
        opt(r.r2_pooled),
        opt(r.lag1_mean),
        opt(r.lag1_frac_below_03),
        format!("{:.6}", r.l0_mean),
        format!("{:.6}", r.dead_fraction),
        opt(r.ms),
        opt(r.purity_mean),
        opt(r.jaccard_mean),
        opt(r.probe_top1),
        opt(r.high_probe_top1),
    ]
    .join(",")
}

type SortKey = (Variant, bool, f64, f64, u64);

fn sort_key(line: &str) -> anyhow::Result<SortKey> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != SWEEP_HEADER.split(',').count() {
        anyhow::bail!("malformed sweep row {line:?}");
    }
    let (v, m) = parse_variant_label(f[0])?;
    Ok((v, m, f[1].parse()?, f[2].parse()?, f[3].parse()?))
}

/// Completed rows of an existing sweep file.
fn read_rows(path: &Path) -> anyhow::Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        None => Ok(Vec::new()),
        Some(h) if h == SWEEP_HEADER => Ok(lines.filter(|l| !l.is_empty()).map(str::to_string).collect()),
        Some(_) => Err(usage(format!("{} is not a sweep CSV", path.display()))),
    }
}

fn write_sorted(path: &Path, rows: &[String]) -> anyhow::Result<()> {
    let mut keyed = rows
        .iter()
        .map(|r| Ok((sort_key(r)?, r)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    keyed.sort_by(|(a, _), (b, _)| {
        a.0.cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.total_cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });
    let mut text = String::from(SWEEP_HEADER);
    text.push('\n');
    for (_, r) in keyed {
        text.push_str(r);
        text.push('\n');
    }
    Ok(write_atomic(path, text.as_bytes())?)
}

fn run_point(
    data: &FeatureTensor,
    rc: &RunConfig,
    sim: Option<&Path>,
    features: &Path,
) -> anyhow::Result<MetricsReport> {
    let sae = validate_train(rc, data.dim)?;
    let (params, _) = train(data, &sae, &rc.train)?;
    let mode = rc.eval.eval_topk.unwrap_or(rc.train.eval_topk_mode);
    let codes = eval_codes(data, &params, mode, rc.eval.smooth, rc.eval.alpha)?;
    let echo = json!({
        "features": features,
        "sim": sim,
        "sae": params.config,
        "train": rc.train,
        "eval": rc.eval,
    });
    evaluate_codes(data, &codes, &params, sim, &rc.eval, echo)
}

pub fn cmd_sweep(a: SweepArgs) -> anyhow::Result<()> {
    let mut base = config::load(a.config.as_deref())?;
    a.sae.apply(&mut base);
    a.train.apply(&mut base);
    if let Some(m) = a.lag1_mode {
        base.eval.report.lag1_mode = m;
    }
    // Timing would make otherwise identical runs differ; sweeps never log it.
    base.train.record_timing = false;
    base.train.checkpoint = None;
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let features = config::required(a.features.clone(), &base.features, "features")?;
    let out = config::required(a.out.clone(), &base.out, "out")?;
    let data = read_features(&features)?;
    let points = grid(&a.variants, &a.lambdas, &a.taus, &a.seeds)?;

    let mut jobs = Vec::new();
    for p in &points {
        let mut rc = p.configure(&base);
        rc.out = None;
        validate_train(&rc, data.dim)?;
        let hash = config_hash(&rc, &features, a.sim.as_deref())?;
        jobs.push((p.clone(), rc, hash));
    }

    let existing = read_rows(&out)?;
    let done: BTreeSet<String> = existing
        .iter()
        .filter_map(|r| r.split(',').nth(4).map(str::to_string))
        .collect();
    if existing.is_empty() {
        write_atomic(&out, format!("{SWEEP_HEADER}\n").as_bytes())?;
    }
    let pending: Vec<_> = jobs.into_iter().filter(|(_, _, h)| !done.contains(h)).collect();
    eprintln!(
        "sweep: {} configurations, {} already complete, {} to run",
        points.len(),
        points.len() - pending.len(),
        pending.len()
    );

    let file = Mutex::new(OpenOptions::new().append(true).open(&out)?);
    let run_one = |(p, rc, hash): &(GridPoint, RunConfig, String)| -> anyhow::Result<()> {
        let rep = run_point(&data, rc, a.sim.as_deref(), &features)
            .with_context(|| format!("run {} lambda={} tau={} seed={}", p.label(), p.lambda, p.tau, p.seed))?;
        let line = row(p, hash, &rep);
        let mut f = file.lock().expect("sweep output lock poisoned");
        writeln!(f, "{line}")?;
        f.flush()?;
        eprintln!("sweep: done {line}");
        Ok(())
    };
    if a.jobs == 1 {
        pending.iter().try_for_each(run_one)?;
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
        pool.install(|| pending.par_iter().try_for_each(run_one))?;
    }
    drop(file);
    write_sorted(&out, &read_rows(&out)?)
}

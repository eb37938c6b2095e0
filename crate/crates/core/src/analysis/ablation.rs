use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{stratified_split, train_probe, FeatureSpace, ProbeConfig, ProbeModel};
use crate::rng::{purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    TopByWeight,
    Random,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            AblationMode::TopByWeight => "top",
            AblationMode::Random => "random",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" | "top_by_weight" => Ok(AblationMode::TopByWeight),
            "random" | "rand" => Ok(AblationMode::Random),
            other => Err(Error::invalid(format!("unknown ablation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub ns: Vec<usize>,
    pub modes: Vec<AblationMode>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub n: usize,
    pub mode: AblationMode,
    pub accuracy: f64,
}

/// Feature importance: L2 norm over classes of each probe weight column.
pub fn feature_importance(probe: &ProbeModel) -> Vec<f64> {
    let f = probe.n_features;
    (0..f)
        .map(|j| {
            (0..probe.n_classes)
                .map(|c| (probe.w[c * f + j] as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Features to ablate, most important first for [`AblationMode::TopByWeight`]
/// (ties to the lower index) or a seeded permutation for
/// [`AblationMode::Random`]. Prefixes of this order give nested sets.
pub fn ablation_order(probe: &ProbeModel, mode: AblationMode, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probe.n_features).collect();
    match mode {
        AblationMode::TopByWeight => {
            let imp = feature_importance(probe);
            order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
        }
        AblationMode::Random => order.shuffle(&mut stream(seed, purpose::ABLATION)),
    }
    order
}

/// Zeroes the selected feature dimensions of held-out pooled codes and
/// scores them with the unchanged probe.
pub fn causal_ablate(
    probe: &ProbeModel,
    x: &[f32],
    labels: &[u32],
    spec: &AblationSpec,
) -> Result<Vec<AblationRow>> {
    let f = probe.n_features;
    if x.len() != labels.len() * f {
        return Err(Error::DimensionMismatch {
            what: "held-out pooled codes",
            expected: labels.len() * f,
            actual: x.len(),
        });
    }
    if let Some(&n) = spec.ns.iter().find(|&&n| n > f) {
        return Err(Error::invalid(format!("cannot ablate {n} of {f} features")));
    }
    let mut rows = Vec::new();
    for &mode in &spec.modes {
        let order = ablation_order(probe, mode, spec.seed);
        for &n in &spec.ns {
            let mut ablated = x.to_vec();
            for row in ablated.chunks_exact_mut(f) {
                for &j in &order[..n] {
                    row[j] = 0.0;
                }
            }
            rows.push(AblationRow {
                n,
                mode,
                accuracy: probe.accuracy(&ablated, labels),
            });
        }
    }
    Ok(rows)
}

/// Trains the probe once on the stratified training split of `pooled`
/// (`[n_clips, F]`), then ablates on the held-out split.
pub fn ablation_experiment(
    pooled: &[f32],
    n_features: usize,
    labels: &[u32],
    space: FeatureSpace,
    split_seed: u64,
    spec: &AblationSpec,
) -> Result<(f64, Vec<AblationRow>)> {
    let cfg = ProbeConfig::default();
    let (probe, baseline) = train_probe(pooled, n_features, labels, space, split_seed, &cfg)?;
    let (_, test) = stratified_split(labels, cfg.test_fraction, split_seed);
    let x: Vec<f32> = test
        .iter()
        .flat_map(|&i| pooled[i * n_features..(i + 1) * n_features].iter().copied())
        .collect();
    let y: Vec<u32> = test.iter().map(|&i| labels[i]).collect();
    Ok((baseline, causal_ablate(&probe, &x, &y, spec)?))
}

pub fn ablation_csv(rows: &[(String, AblationRow)]) -> String {
    let mut out = String::from("variant,N,mode,accuracy\n");
    for (variant, r) in rows {
        out.push_str(&format!("{variant},{},{},{}\n", r.n, r.mode.name(), r.accuracy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> ProbeModel {
        ProbeModel {
            n_classes: 2,
            n_features: 3,
            feature_space: FeatureSpace::SaePooled,
            w: vec![0.1, -3.0, 0.5, -0.1, 3.0, 0.0],
            b: vec![0.0, 0.0],
            mean: vec![0.0; 3],
            scale: vec![1.0; 3],
            train_loss: 0.0,
        }
    }

    #[test]
    fn importance_and_order() {
        let p = probe();
        let imp = feature_importance(&p);
        assert!((imp[1] - 18f64.sqrt()).abs() < 1e-6);
        assert_eq!(ablation_order(&p, AblationMode::TopByWeight, 0), vec![1, 2, 0]);
        let mut r = ablation_order(&p, AblationMode::Random, 5);
        assert_eq!(r, ablation_order(&p, AblationMode::Random, 5));
        r.sort();
        assert_eq!(r, vec![0, 1, 2]);
    }

    #[test]
    fn zero_ablation_is_baseline_and_too_many_errors() {
        let p = probe();
        let x = vec![0.0, 1.0, 0.0, 0.0, -1.0, 0.0];
        let y = vec![1, 0];
        let spec = AblationSpec {
            ns: vec![0, 1],
            modes: vec![AblationMode::TopByWeight],
            seed: 0,
        };
        let rows = causal_ablate(&p, &x, &y, &spec).unwrap();
        assert_eq!(rows[0].accuracy, p.accuracy(&x, &y));
        assert_eq!(rows[0].accuracy, 1.0);
        assert_eq!(rows[1].accuracy, 0.5);
        let spec = AblationSpec { ns: vec![4], ..spec };
        assert!(causal_ablate(&p, &x, &y, &spec).is_err());
    }
}

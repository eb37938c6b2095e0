use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{EmbeddingKind, EmbeddingSet};
use crate::metrics::stratified_split;
use crate::rng::{purpose, stream};

pub const DEFAULT_ALPHAS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSpec {
    pub alphas: Vec<f64>,
    pub folds: usize,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        RetrievalSpec {
            alphas: DEFAULT_ALPHAS.to_vec(),
            folds: 5,
            split_seed: 0,
            train_fraction: 0.8,
        }
    }
}

impl RetrievalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::invalid("ridge alpha grid is empty"));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!("ridge alpha {a} must be > 0")));
        }
        if self.folds < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Affine map `y = W[:, ..F] x + W[:, F]`, stored `[E, F + 1]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f32>,
    pub alpha: f64,
}

impl RidgeModel {
    pub fn project(&self, x: &[f32]) -> Vec<f64> {
        let stride = self.n_in + 1;
        (0..self.n_out)
            .map(|e| {
                let row = &self.w[e * stride..(e + 1) * stride];
                row[self.n_in] as f64
                    + row[..self.n_in].iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum::<f64>()
            })
            .collect()
    }
}

fn matrix(data: &[f32], rows: &[usize], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |r, c| data[rows[r] * cols + c] as f64)
}

/// Ridge solution with an unpenalised intercept: `(B, intercept)` with
/// `B` of shape `[F, E]`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("ridge alpha must be > 0"));
    }
    let n = x.nrows();
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let singular = || Error::Degenerate(format!("ridge system is not positive definite at alpha {alpha}"));
    let b = if x.ncols() <= n {
        let mut gram = xc.tr_mul(&xc);
        for i in 0..gram.nrows() {
            gram[(i, i)] += alpha;
        }
        let rhs = xc.tr_mul(&yc);
        gram.cholesky().ok_or_else(singular)?.solve(&rhs)
    } else {
        // dual form: B = Xc^T (Xc Xc^T + alpha I)^-1 Yc
        let mut k = &xc * xc.transpose();
        for i in 0..n {
            k[(i, i)] += alpha;
        }
        let a = k.cholesky().ok_or_else(singular)?.solve(&yc);
        xc.tr_mul(&a)
    };
    let intercept = (y_mean - x_mean * &b).transpose();
    Ok((b, intercept))
}

fn to_model(b: &DMatrix<f64>, intercept: &DVector<f64>, alpha: f64) -> RidgeModel {
    let (f, e) = (b.nrows(), b.ncols());
    let mut w = Vec::with_capacity(e * (f + 1));
    for o in 0..e {
        w.extend((0..f).map(|i| b[(i, o)] as f32));
        w.push(intercept[o] as f32);
    }
    RidgeModel {
        n_in: f,
        n_out: e,
        w,
        alpha,
    }
}

/// Picks alpha by k-fold cross-validated MSE on `(x, y)` (`[n, F]`,
/// `[n, E]`), then refits on all rows. Returns the model and the CV MSE of
/// every alpha.
pub fn ridge_fit_cv(
    x: &[f32],
    n_in: usize,
    y: &[f32],
    n_out: usize,
    spec: &RetrievalSpec,
) -> Result<(RidgeModel, Vec<f64>)> {
    spec.validate()?;
    let n = y.len() / n_out.max(1);
    if n_in == 0 || n_out == 0 || x.len() != n * n_in || y.len() != n * n_out {
        return Err(Error::invalid("ridge inputs have inconsistent shapes"));
    }
    if n < spec.folds {
        return Err(Error::invalid(format!("{n} rows cannot fill {} folds", spec.folds)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(spec.split_seed, purpose::CV_FOLDS));
    let folds: Vec<Vec<usize>> = (0..spec.folds)
        .map(|f| order.iter().skip(f).step_by(spec.folds).copied().collect())
        .collect();

    let mut cv_mse = Vec::with_capacity(spec.alphas.len());
    for &alpha in &spec.alphas {
        let mut sse = 0.0;
        for held in &folds {
            let mut is_held = vec![false; n];
            held.iter().for_each(|&i| is_held[i] = true);
            let fit_rows: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
            let (b, c) = ridge_solve(&matrix(x, &fit_rows, n_in), &matrix(y, &fit_rows, n_out), alpha)?;
            let pred = matrix(x, held, n_in) * &b;
            let truth = matrix(y, held, n_out);
            for r in 0..held.len() {
                for o in 0..n_out {
                    sse += (pred[(r, o)] + c[o] - truth[(r, o)]).powi(2);
                }
            }
        }
        cv_mse.push(sse / (n * n_out) as f64);
    }
    let best = (0..cv_mse.len())
        .min_by(|&a, &b| cv_mse[a].total_cmp(&cv_mse[b]).then(a.cmp(&b)))
        .expect("non-empty alpha grid");
    let all: Vec<usize> = (0..n).collect();
    let alpha = spec.alphas[best];
    let (b, c) = ridge_solve(&matrix(x, &all, n_in), &matrix(y, &all, n_out), alpha)?;
    Ok((to_model(&b, &c, alpha), cv_mse))
}

/// Recall@1 and Recall@5 of projected clips against class text embeddings,
/// ranking classes by cosine similarity with ties to the lower class id.
pub fn retrieval_eval(
    model: &RidgeModel,
    x: &[f32],
    labels: &[u32],
    classes: &EmbeddingSet,
) -> Result<(f64, f64)> {
    if classes.dim != model.n_out {
        return Err(Error::DimensionMismatch {
            what: "text embedding dim",
            expected: model.n_out,
            actual: classes.dim,
        });
    }
    if x.len() != labels.len() * model.n_in {
        return Err(Error::DimensionMismatch {
            what: "test clips",
            expected: labels.len() * model.n_in,
            actual: x.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes.count) {
        return Err(Error::Missing(format!("no text embedding for class {l}")));
    }
    if labels.is_empty() {
        return Err(Error::invalid("no test clips"));
    }
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 0.0 {
            v.into_iter().map(|a| a / n).collect()
        } else {
            v
        }
    };
    let class_unit: Vec<Vec<f64>> = (0..classes.count)
        .map(|c| unit(classes.row(c).iter().map(|&v| v as f64).collect()))
        .collect();
    let (mut r1, mut r5) = (0usize, 0usize);
    for (row, &y) in x.chunks_exact(model.n_in).zip(labels) {
        let p = unit(model.project(row));
        let sims: Vec<f64> = class_unit
            .iter()
            .map(|c| c.iter().zip(&p).map(|(a, b)| a * b).sum())
            .collect();
        let own = sims[y as usize];
        let rank = sims
            .iter()
            .enumerate()
            .filter(|&(c, &s)| s > own || (s == own && c < y as usize))
            .count();
        r1 += usize::from(rank < 1);
        r5 += usize::from(rank < 5);
    }
    let n = labels.len() as f64;
    Ok((r1 as f64 / n, r5 as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub alpha: f64,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub n_test: usize,
}

/// Stratified split of labelled pooled clips, ridge fit from clips to their
/// class text embeddings on the training side, recall on the test side.
pub fn retrieval_experiment(
    pooled: &[f32],
    n_in: usize,
    labels: &[u32],
    classes: &EmbeddingSet,
    spec: &RetrievalSpec,
) -> Result<RetrievalReport> {
    spec.validate()?;
    if classes.kind != EmbeddingKind::PerClass {
        return Err(Error::invalid("retrieval needs per-class text embeddings"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes.count) {
        return Err(Error::Missing(format!("no text embedding for class {l}")));
    }
    let (train, test) = stratified_split(labels, 1.0 - spec.train_fraction, spec.split_seed);
    let gather = |rows: &[usize]| -> Vec<f32> {
        rows.iter()
            .flat_map(|&i| pooled[i * n_in..(i + 1) * n_in].iter().copied())
            .collect()
    };
    let x_train = gather(&train);
    let y_train: Vec<f32> = train
        .iter()
        .flat_map(|&i| classes.row(labels[i] as usize).iter().copied())
        .collect();
    let (model, _) = ridge_fit_cv(&x_train, n_in, &y_train, classes.dim, spec)?;
    let y_test: Vec<u32> = test.iter().map(|&i| labels[i]).collect();
    let (r_at_1, r_at_5) = retrieval_eval(&model, &gather(&test), &y_test, classes)?;
    Ok(RetrievalReport {
        alpha: model.alpha,
        r_at_1,
        r_at_5,
        n_test: test.len(),
    })
}

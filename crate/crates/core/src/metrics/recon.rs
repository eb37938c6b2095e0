use crate::error::{Error, Result};

/// Variance explained, `1 - sum ||x - x_hat||^2 / sum ||x - x_bar||^2` with
/// `x_bar` the global mean token. With `pool = Some(n)` both tensors are
/// first mean-pooled over consecutive groups of `n` tokens (one clip each).
pub fn r_squared(x: &[f32], x_hat: &[f32], dim: usize, pool: Option<usize>) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            what: "reconstruction",
            expected: x.len(),
            actual: x_hat.len(),
        });
    }
    if dim == 0 || !x.len().is_multiple_of(dim) || x.is_empty() {
        return Err(Error::invalid("token matrix shape does not match dim"));
    }
    let (xs, xh) = match pool {
        None => (to_f64(x), to_f64(x_hat)),
        Some(n) => (pool_tokens(x, dim, n)?, pool_tokens(x_hat, dim, n)?),
    };
    let n_tok = xs.len() / dim;
    let mut mean = vec![0.0; dim];
    for tok in xs.chunks_exact(dim) {
        mean.iter_mut().zip(tok).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n_tok as f64);
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (a, b) in xs.chunks_exact(dim).zip(xh.chunks_exact(dim)) {
        for r in 0..dim {
            sse += (a[r] - b[r]).powi(2);
            sst += (a[r] - mean[r]).powi(2);
        }
    }
    if !(sst > 1e-12) {
        return Err(Error::Degenerate("input has zero variance".into()));
    }
    Ok(1.0 - sse / sst)
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn pool_tokens(v: &[f32], dim: usize, group: usize) -> Result<Vec<f64>> {
    if group == 0 || !(v.len() / dim).is_multiple_of(group) {
        return Err(Error::invalid(format!(
            "{} tokens do not split into clips of {group}",
            v.len() / dim
        )));
    }
    Ok(v.chunks_exact(dim * group)
        .flat_map(|clip| {
            let mut acc = vec![0.0f64; dim];
            for tok in clip.chunks_exact(dim) {
                acc.iter_mut().zip(tok).for_each(|(a, &b)| *a += b as f64);
            }
            acc.into_iter().map(move |a| a / group as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_mean_and_worse() {
        let x = [1.0, 2.0, 3.0, 5.0, -1.0, 0.0];
        assert_eq!(r_squared(&x, &x, 2, None).unwrap(), 1.0);
        let mean = [1.0, 7.0 / 3.0, 1.0, 7.0 / 3.0, 1.0, 7.0 / 3.0];
        assert!(r_squared(&x, &mean, 2, None).unwrap().abs() < 1e-6);
        let bad: Vec<f32> = x.iter().map(|v| -3.0 * v).collect();
        assert!(r_squared(&x, &bad, 2, None).unwrap() < 0.0);
    }

    #[test]
    fn pooled_averages_clips_first() {
        // two clips of two 1-d tokens; pooled values 1.5 and 3.5
        let x = [1.0, 2.0, 3.0, 4.0];
        let x_hat = [2.0, 1.0, 4.0, 3.0];
        assert_eq!(r_squared(&x, &x_hat, 1, Some(2)).unwrap(), 1.0);
        assert!(r_squared(&x, &x_hat, 1, None).unwrap() < 1.0);
    }

    #[test]
    fn zero_variance_errors() {
        let x = [2.0; 4];
        assert!(matches!(r_squared(&x, &x, 2, None), Err(Error::Degenerate(_))));
    }
}

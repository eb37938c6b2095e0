use crate::error::{Error, Result};
use crate::real::Real;

/// Positive activations of one token over an `n_latents`-wide dictionary,
/// sorted by latent index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<F = f32> {
    pub n_latents: usize,
    pub active: Vec<(u32, F)>,
}

impl<F: Real> SparseCode<F> {
    pub fn new(n_latents: usize, active: Vec<(u32, F)>) -> Result<Self> {
        let code = SparseCode { n_latents, active };
        code.validate()?;
        Ok(code)
    }

    pub fn empty(n_latents: usize) -> Self {
        SparseCode {
            n_latents,
            active: Vec::new(),
        }
    }

    /// Keeps the strictly positive entries of a dense vector.
    pub fn from_dense(dense: &[F]) -> Self {
        SparseCode {
            n_latents: dense.len(),
            active: dense
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > F::zero())
                .map(|(i, &v)| (i as u32, v))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<u32> = None;
        for &(i, v) in &self.active {
            if i as usize >= self.n_latents {
                return Err(Error::invalid(format!(
                    "latent {i} out of range {}",
                    self.n_latents
                )));
            }
            if prev.is_some_and(|p| p >= i) {
                return Err(Error::invalid("sparse code indices not strictly increasing"));
            }
            if !(v > F::zero()) || !v.is_finite() {
                return Err(Error::invalid(format!("latent {i} has non-positive value")));
            }
            prev = Some(i);
        }
        Ok(())
    }

    pub fn l0(&self) -> usize {
        self.active.len()
    }

    pub fn to_dense(&self) -> Vec<F> {
        let mut out = vec![F::zero(); self.n_latents];
        for &(i, v) in &self.active {
            out[i as usize] = v;
        }
        out
    }

    pub fn get(&self, index: u32) -> F {
        self.active
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(F::zero(), |pos| self.active[pos].1)
    }

    pub fn norm(&self) -> F {
        self.active
            .iter()
            .fold(F::zero(), |acc, &(_, v)| acc + v * v)
            .sqrt()
    }

    pub fn sum(&self) -> F {
        self.active.iter().fold(F::zero(), |acc, &(_, v)| acc + v)
    }

    /// Dot product by merging the two sorted index lists.
    pub fn dot(&self, other: &SparseCode<F>) -> F {
        let (a, b) = (&self.active, &other.active);
        let (mut i, mut j) = (0, 0);
        let mut acc = F::zero();
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine similarity over the full dictionary width; zero if either code
    /// is empty.
    pub fn cosine(&self, other: &SparseCode<F>) -> F {
        let denom = self.norm() * other.norm();
        if denom > F::zero() {
            self.dot(other) / denom
        } else {
            F::zero()
        }
    }

    /// Entries with index below `split`, without reselection.
    pub fn restrict_below(&self, split: usize) -> SparseCode<F> {
        SparseCode {
            n_latents: self.n_latents,
            active: self
                .active
                .iter()
                .copied()
                .take_while(|&(i, _)| (i as usize) < split)
                .collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> SparseCode<G> {
        SparseCode {
            n_latents: self.n_latents,
            active: self
                .active
                .iter()
                .map(|&(i, v)| (i, G::of(v.to_f64_lossy())))
                .collect(),
        }
    }
}

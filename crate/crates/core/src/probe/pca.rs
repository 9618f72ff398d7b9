use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{fix_sign, orthonormalize_rows, symmetric_eigen};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::{matmul, Op, Scalar};

/// Above this dimension the covariance is never formed; the top components
/// come from block power iteration instead.
pub const DENSE_EIGEN_MAX_DIM: usize = 256;
const OVERSAMPLE: usize = 8;
const MAX_POWER_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// `k` orthonormal rows of length `d`, by descending variance.
    pub components: Vec<Vec<T>>,
    /// Variance along each component.
    pub variances: Vec<T>,
    pub total_variance: T,
}

impl<T: Scalar> Pca<T> {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The leading `k` components; PCA fits are nested, so this equals a fit at `k`.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::Contract(format!(
                "cannot keep {k} of {} components",
                self.k()
            )));
        }
        Ok(Self {
            mean: self.mean.clone(),
            components: self.components[..k].to_vec(),
            variances: self.variances[..k].to_vec(),
            total_variance: self.total_variance,
        })
    }

    pub fn explained_variance_ratio(&self) -> Vec<T> {
        self.variances
            .iter()
            .map(|&v| {
                if self.total_variance > T::zero() {
                    v / self.total_variance
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((&w, &v), &m)| w * (v - m))
                    .sum()
            })
            .collect()
    }

    pub fn apply_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.sample_len() != self.dim() {
            return Err(Error::Shape(format!(
                "PCA fitted on d={}, got d={}",
                self.dim(),
                x.sample_len()
            )));
        }
        let data = (0..x.batch()).flat_map(|i| self.apply(x.row(i))).collect();
        Tensor::new(vec![x.batch(), self.k()], data)
    }

    pub fn reconstruct(&self, z: &[T]) -> Vec<T> {
        let mut out = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (o, &w) in out.iter_mut().zip(c) {
                *o += zi * w;
            }
        }
        out
    }
}

/// Mean-centered PCA keeping the top `k` components of the sample covariance
/// (`n - 1` denominator). Each component's largest-magnitude entry is positive.
pub fn fit_pca<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Pca<T>> {
    let (n, d) = (x.batch(), x.sample_len());
    if k == 0 || k > n.min(d) {
        return Err(Error::Contract(format!(
            "PCA needs 1 <= k <= min(n, d) = {}, got k = {k}",
            n.min(d)
        )));
    }
    x.ensure_finite("PCA input")?;
    let nf = T::from_usize_lossy(n);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut centered = x.data().to_vec();
    for row in centered.chunks_mut(d) {
        for (v, &m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = T::from_usize_lossy(n.saturating_sub(1).max(1));
    let total_variance = centered.iter().map(|&v| v * v).sum::<T>() / denom;

    let (variances, mut components) = if d <= DENSE_EIGEN_MAX_DIM {
        let mut cov = vec![T::zero(); d * d];
        matmul(
            d,
            n,
            d,
            &centered,
            Op::T,
            &centered,
            Op::N,
            T::zero(),
            &mut cov,
        );
        cov.iter_mut().for_each(|c| *c /= denom);
        let (vals, vecs) = symmetric_eigen(&cov, d);
        (vals[..k].to_vec(), vecs[..k].to_vec())
    } else {
        top_components(&centered, n, d, k, denom)
    };
    components.iter_mut().for_each(|c| fix_sign(c));
    Ok(Pca {
        mean,
        components,
        variances,
        total_variance,
    })
}

/// Block power iteration on `C = Xᵀ X / denom` with Rayleigh–Ritz extraction.
fn top_components<T: Scalar>(
    xc: &[T],
    n: usize,
    d: usize,
    k: usize,
    denom: T,
) -> (Vec<T>, Vec<Vec<T>>) {
    let b = (k + OVERSAMPLE).min(d).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9ca);
    let mut basis: Vec<Vec<T>> = (0..b)
        .map(|_| (0..d).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect())
        .collect();
    orthonormalize_rows(&mut basis);
    let mut prev = vec![T::zero(); k];
    let mut proj = vec![T::zero(); n * b];
    let mut back = vec![T::zero(); b * d];
    let mut ritz = (Vec::new(), Vec::new());
    for iter in 0..MAX_POWER_ITERS {
        let q: Vec<T> = basis.concat();
        // proj = X Qᵀ (n x b)
        matmul(n, d, b, xc, Op::N, &q, Op::T, T::zero(), &mut proj);
        // Rayleigh–Ritz on the current subspace: B = (XQᵀ)ᵀ(XQᵀ) / denom
        let mut small = vec![T::zero(); b * b];
        matmul(b, n, b, &proj, Op::T, &proj, Op::N, T::zero(), &mut small);
        small.iter_mut().for_each(|v| *v /= denom);
        let (vals, vecs) = symmetric_eigen(&small, b);
        let rotated: Vec<Vec<T>> = vecs
            .iter()
            .map(|coef| {
                let mut v = vec![T::zero(); d];
                for (c, row) in coef.iter().zip(&basis) {
                    for (o, &x) in v.iter_mut().zip(row) {
                        *o += *c * x;
                    }
                }
                v
            })
            .collect();
        let converged = iter > 0
            && vals[..k]
                .iter()
                .zip(&prev)
                .all(|(&a, &p)| (a - p).abs() <= T::lit(1e-12) * vals[0].abs().max(T::one()));
        prev = vals[..k].to_vec();
        ritz = (vals, rotated.clone());
        if converged {
            break;
        }
        // next basis = orth(C · rotated)
        let r: Vec<T> = rotated.concat();
        matmul(n, d, b, xc, Op::N, &r, Op::T, T::zero(), &mut proj);
        matmul(b, n, d, &proj, Op::T, xc, Op::N, T::zero(), &mut back);
        basis = back.chunks(d).map(|c| c.to_vec()).collect();
        orthonormalize_rows(&mut basis);
    }
    let (vals, vecs) = ritz;
    (vals[..k].to_vec(), vecs[..k].to_vec())
}

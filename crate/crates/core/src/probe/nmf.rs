use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::{matmul, Op, Scalar};

/// Nonnegative basis `W` (`k x d`); a sample `x` is encoded as the
/// nonnegative `h` minimizing `|x - hW|²` with `W` frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nmf<T> {
    pub basis: Vec<T>,
    pub k: usize,
    pub d: usize,
    /// Added to every input before factorizing; nonzero only when the fit was
    /// asked to shift inputs with negative entries.
    pub shift: T,
    pub encode_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct NmfFit<T> {
    pub model: Nmf<T>,
    /// Training codes `H` (`n x k`).
    pub codes: Vec<T>,
    /// Squared Frobenius residual after initialization and after every update.
    pub objective: Vec<T>,
}

/// Lee–Seung multiplicative updates for `X ≈ H W` under the Frobenius loss.
pub fn fit_nmf<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<NmfFit<T>> {
    if let Some(v) = x.data().iter().find(|&&v| v < T::zero()) {
        return Err(Error::Contract(format!(
            "NMF input has a negative entry ({v})"
        )));
    }
    fit_nonnegative(
        x.data(),
        x.batch(),
        x.sample_len(),
        k,
        iterations,
        seed,
        T::zero(),
    )
}

/// As [`fit_nmf`], but inputs are first shifted by `-min(x)` when that is
/// negative. The shift is stored in the model and applied on encode.
pub fn fit_nmf_shifted<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<NmfFit<T>> {
    let min = x.data().iter().copied().fold(T::infinity(), T::min);
    if min >= T::zero() {
        return fit_nmf(x, k, iterations, seed);
    }
    let shifted: Vec<T> = x.data().iter().map(|&v| v - min).collect();
    fit_nonnegative(
        &shifted,
        x.batch(),
        x.sample_len(),
        k,
        iterations,
        seed,
        -min,
    )
}

fn fit_nonnegative<T: Scalar>(
    x: &[T],
    n: usize,
    d: usize,
    k: usize,
    iterations: usize,
    seed: u64,
    shift: T,
) -> Result<NmfFit<T>> {
    if k == 0 || k > d {
        return Err(Error::Contract(format!(
            "NMF needs 1 <= k <= d = {d}, got {k}"
        )));
    }
    if n == 0 {
        return Err(Error::Contract("NMF input is empty".into()));
    }
    crate::nn::tensor::ensure_finite(x, "NMF input")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = x.iter().copied().sum::<T>() / T::from_usize_lossy(x.len());
    let scale = (mean / T::from_usize_lossy(k)).sqrt().max(T::lit(1e-3));
    let mut h: Vec<T> = (0..n * k)
        .map(|_| scale * T::lit(rng.gen_range(0.05..1.0)))
        .collect();
    let mut w: Vec<T> = (0..k * d)
        .map(|_| scale * T::lit(rng.gen_range(0.05..1.0)))
        .collect();

    let mut objective = vec![residual(x, &h, &w, n, d, k)];
    let mut num_h = vec![T::zero(); n * k];
    let mut wwt = vec![T::zero(); k * k];
    let mut den_h = vec![T::zero(); n * k];
    let mut num_w = vec![T::zero(); k * d];
    let mut hth = vec![T::zero(); k * k];
    let mut den_w = vec![T::zero(); k * d];
    for _ in 0..iterations {
        matmul(n, d, k, x, Op::N, &w, Op::T, T::zero(), &mut num_h);
        matmul(k, d, k, &w, Op::N, &w, Op::T, T::zero(), &mut wwt);
        matmul(n, k, k, &h, Op::N, &wwt, Op::N, T::zero(), &mut den_h);
        multiplicative(&mut h, &num_h, &den_h);
        matmul(k, n, d, &h, Op::T, x, Op::N, T::zero(), &mut num_w);
        matmul(k, n, k, &h, Op::T, &h, Op::N, T::zero(), &mut hth);
        matmul(k, k, d, &hth, Op::N, &w, Op::N, T::zero(), &mut den_w);
        multiplicative(&mut w, &num_w, &den_w);
        objective.push(residual(x, &h, &w, n, d, k));
    }
    crate::nn::tensor::ensure_finite(&w, "NMF basis")?;
    let model = Nmf {
        basis: w,
        k,
        d,
        shift,
        encode_iterations: 200,
    };
    Ok(NmfFit {
        model,
        codes: h,
        objective,
    })
}

/// `v *= num / den` where `den > 0`; entries with a zero denominator are kept.
fn multiplicative<T: Scalar>(v: &mut [T], num: &[T], den: &[T]) {
    for ((x, &a), &b) in v.iter_mut().zip(num).zip(den) {
        if b > T::zero() {
            *x = *x * a / b;
        }
    }
}

fn residual<T: Scalar>(x: &[T], h: &[T], w: &[T], n: usize, d: usize, k: usize) -> T {
    let mut approx = vec![T::zero(); n * d];
    matmul(n, k, d, h, Op::N, w, Op::N, T::zero(), &mut approx);
    x.iter()
        .zip(&approx)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum()
}

impl<T: Scalar> Nmf<T> {
    /// Nonnegative code for one sample. Inputs below the training minimum are
    /// clamped to zero after the shift.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.d {
            return Err(Error::Shape(format!(
                "NMF fitted on d={}, got d={}",
                self.d,
                x.len()
            )));
        }
        let xs: Vec<T> = x.iter().map(|&v| (v + self.shift).max(T::zero())).collect();
        if self.shift == T::zero() && x.iter().any(|&v| v < T::zero()) {
            return Err(Error::Contract("NMF input has a negative entry".into()));
        }
        let (k, d) = (self.k, self.d);
        let mut wx = vec![T::zero(); k];
        matmul(k, d, 1, &self.basis, Op::N, &xs, Op::N, T::zero(), &mut wx);
        let mut wwt = vec![T::zero(); k * k];
        matmul(
            k,
            d,
            k,
            &self.basis,
            Op::N,
            &self.basis,
            Op::T,
            T::zero(),
            &mut wwt,
        );
        let mut h = vec![T::one(); k];
        let mut den = vec![T::zero(); k];
        for _ in 0..self.encode_iterations {
            matmul(k, k, 1, &wwt, Op::N, &h, Op::N, T::zero(), &mut den);
            multiplicative(&mut h, &wx, &den);
        }
        Ok(h)
    }

    pub fn apply_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(x.batch() * self.k);
        for i in 0..x.batch() {
            data.extend(self.apply(x.row(i))?);
        }
        Tensor::new(vec![x.batch(), self.k], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_rank_one_is_recovered() {
        let h = [1.0f64, 2.0, 0.5, 3.0, 1.5];
        let w = [0.2f64, 1.0, 0.7, 0.1];
        let x: Vec<f64> = h
            .iter()
            .flat_map(|a| w.iter().map(move |b| a * b))
            .collect();
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let fit = fit_nmf(&Tensor::new(vec![5, 4], x).unwrap(), 1, 500, 0).unwrap();
        let rel = fit.objective.last().unwrap().sqrt() / norm;
        assert!(rel < 1e-3, "relative residual {rel}");
    }

    #[test]
    fn negative_input_is_rejected() {
        let x = Tensor::new(vec![2, 2], vec![1.0f64, -0.1, 0.3, 0.2]).unwrap();
        assert!(matches!(fit_nmf(&x, 1, 10, 0), Err(Error::Contract(_))));
        let fit = fit_nmf_shifted(&x, 1, 10, 0).unwrap();
        assert!((fit.model.shift - 0.1).abs() < 1e-12);
    }

    #[test]
    fn codes_are_nonnegative() {
        let x = Tensor::new(
            vec![3, 3],
            vec![1.0f64, 0.0, 2.0, 0.5, 0.5, 0.5, 0.0, 3.0, 1.0],
        )
        .unwrap();
        let fit = fit_nmf(&x, 2, 100, 1).unwrap();
        let code = fit.model.apply(&[0.2, 0.4, 0.9]).unwrap();
        assert!(code.iter().all(|&c| c >= 0.0));
        assert!(fit.model.basis.iter().all(|&b| b >= 0.0));
    }
}

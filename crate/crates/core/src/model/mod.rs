//! Target densities `p(θ, D)` with hand-written gradients.
//!
//! A model exposes its prior and per-record log-likelihood; the trait's
//! provided methods assemble the log joint over the full dataset or over a
//! subsample, where each subsampled record's log-likelihood is scaled by
//! `N / |I|`.

mod bnn;
mod data;
mod gaussian;
mod special;

pub use bnn::{Activation, BnnRegressionModel, NoiseModel};
pub use data::{
    generate_wave_dataset, generate_wave_region, load_csv_dataset, wave_mean, Dataset, Region, WAVE_NOISE_SD,
};
pub use gaussian::{GaussianTarget, LinearGaussianModel};

use itertools::Itertools;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::scalar::{to_f64_vec, Scalar};

/// Which records enter the likelihood.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    Full,
    Indices(&'a [usize]),
}

pub trait LogJointModel<T: Scalar>: Send + Sync {
    fn latent_dim(&self) -> usize;

    /// Number of records `N`; zero for pure-density targets.
    fn n_data(&self) -> usize;

    fn log_prior(&self, theta: &[T]) -> T;

    /// `out += ∇ log p(θ)`.
    fn add_grad_log_prior(&self, theta: &[T], out: &mut [T]);

    fn log_lik_point(&self, theta: &[T], n: usize) -> T;

    /// `out += scale · ∇ log p(xₙ | θ)`.
    fn add_grad_log_lik_point(&self, theta: &[T], n: usize, scale: T, out: &mut [T]);

    fn log_joint(&self, theta: &[T], batch: Batch<'_>) -> Result<T> {
        check_dim(self.latent_dim(), theta.len())?;
        let n = self.n_data();
        let lik = match batch {
            Batch::Full => (0..n).map(|i| self.log_lik_point(theta, i)).sum::<T>(),
            Batch::Indices(idx) => {
                check_indices(idx, n)?;
                let s: T = idx.iter().map(|&i| self.log_lik_point(theta, i)).sum();
                s * likelihood_scale::<T>(n, idx.len())
            }
        };
        let v = self.log_prior(theta) + lik;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "log_joint".into(),
                at: to_f64_vec(theta),
            });
        }
        Ok(v)
    }

    fn grad_log_joint(&self, theta: &[T], batch: Batch<'_>) -> Result<Vec<T>> {
        check_dim(self.latent_dim(), theta.len())?;
        let n = self.n_data();
        let mut g = vec![T::zero(); theta.len()];
        self.add_grad_log_prior(theta, &mut g);
        match batch {
            Batch::Full => {
                for i in 0..n {
                    self.add_grad_log_lik_point(theta, i, T::one(), &mut g);
                }
            }
            Batch::Indices(idx) => {
                check_indices(idx, n)?;
                let scale = likelihood_scale::<T>(n, idx.len());
                for &i in idx {
                    self.add_grad_log_lik_point(theta, i, scale, &mut g);
                }
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "grad_log_joint".into(),
                at: to_f64_vec(theta),
            });
        }
        Ok(g)
    }

    /// `(log p(θ, D), ∇ log p(θ, D))`; models may fuse the two passes.
    fn log_joint_and_grad(&self, theta: &[T], batch: Batch<'_>) -> Result<(T, Vec<T>)> {
        Ok((self.log_joint(theta, batch)?, self.grad_log_joint(theta, batch)?))
    }
}

/// Models with a regression likelihood `p(y | x, θ)` usable for prediction.
pub trait RegressionModel<T: Scalar>: LogJointModel<T> {
    fn output_dim(&self) -> usize;

    /// Mean of `p(y | x, θ)`.
    fn predict(&self, theta: &[T], x: &[T]) -> Vec<T>;

    fn log_predictive(&self, theta: &[T], x: &[T], y: &[T]) -> T;
}

/// Exponent `N / |I|` applied to each subsampled log-likelihood term.
#[inline]
pub fn likelihood_scale<T: Scalar>(n: usize, batch_len: usize) -> T {
    T::of_usize(n) / T::of_usize(batch_len)
}

pub(crate) fn check_indices(idx: &[usize], n: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::InvalidInput("empty minibatch".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::BatchIndexOutOfRange { index: bad, n });
    }
    Ok(())
}

/// Draw `size` distinct record indices uniformly, returned in ascending order.
pub fn sample_batch<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if size == 0 || size > n {
        return Err(Error::InvalidConfig(format!("batch size {size} must be in [1, {n}]")));
    }
    let mut idx = rand::seq::index::sample(rng, n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Subsets enumerated by [`minibatch_expectation_check`] before it refuses.
pub const MAX_ENUMERATED_SUBSETS: usize = 1_000_000;

/// Average of the subsampled log joint over every size-`batch_size` subset,
/// paired with the full-data value. Both agree when the estimator is unbiased.
///
/// This enumerates all `C(N, batch_size)` subsets and is meant as a test
/// oracle only.
pub fn minibatch_expectation_check<T: Scalar, M: LogJointModel<T> + ?Sized>(
    model: &M,
    theta: &[T],
    batch_size: usize,
) -> Result<(T, T)> {
    let n = model.n_data();
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidInput(format!(
            "batch size {batch_size} must be in [1, {n}]"
        )));
    }
    let count = binomial(n, batch_size);
    if count > MAX_ENUMERATED_SUBSETS as f64 {
        return Err(Error::InvalidInput(format!(
            "C({n}, {batch_size}) = {count} subsets is too many to enumerate"
        )));
    }
    let mut total = T::zero();
    let mut k = 0usize;
    for subset in (0..n).combinations(batch_size) {
        total = total + model.log_joint(theta, Batch::Indices(&subset))?;
        k += 1;
    }
    let exact = model.log_joint(theta, Batch::Full)?;
    Ok((total / T::of_usize(k), exact))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn toy() -> LinearGaussianModel<f64> {
        let ds = Dataset::new(
            vec![vec![1.0], vec![-0.5], vec![2.0], vec![0.3]],
            vec![vec![0.9], vec![-0.2], vec![2.4], vec![0.1]],
        )
        .unwrap();
        LinearGaussianModel::new(ds, vec![0.0], 1.0, 0.25).unwrap()
    }

    #[test]
    fn full_batch_equals_all_indices() {
        let m = toy();
        let th = [0.37];
        let a = m.log_joint(&th, Batch::Full).unwrap();
        let b = m.log_joint(&th, Batch::Indices(&[0, 1, 2, 3])).unwrap();
        assert_eq!(a, b);
        let ga = m.grad_log_joint(&th, Batch::Full).unwrap();
        let gb = m.grad_log_joint(&th, Batch::Indices(&[0, 1, 2, 3])).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn subset_is_rescaled() {
        let m = toy();
        let th = [0.37];
        let direct = m.log_prior(&th) + 2.0 * (m.log_lik_point(&th, 0) + m.log_lik_point(&th, 1));
        let v = m.log_joint(&th, Batch::Indices(&[0, 1])).unwrap();
        assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let m = toy();
        assert!(matches!(
            m.log_joint(&[0.0], Batch::Indices(&[1, 4])),
            Err(Error::BatchIndexOutOfRange { index: 4, n: 4 })
        ));
        assert!(m.grad_log_joint(&[0.0], Batch::Indices(&[9])).is_err());
        assert!(m.log_joint(&[0.0, 1.0], Batch::Full).is_err());
    }

    #[test]
    fn minibatch_enumeration_examples() {
        let m = toy();
        let th = [0.81];
        for (b, subsets) in [(4usize, 1usize), (2, 6), (1, 4)] {
            assert_eq!(binomial(4, b).round() as usize, subsets);
            let (mean, exact) = minibatch_expectation_check(&m, &th, b).unwrap();
            assert!(((mean - exact) / exact).abs() < 1e-10, "b={b}: {mean} vs {exact}");
        }
        let ds3 = Dataset::new(
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![vec![0.5], vec![1.0], vec![2.0]],
        )
        .unwrap();
        let m3: LinearGaussianModel<f64> = LinearGaussianModel::new(ds3, vec![0.0], 2.0, 0.5).unwrap();
        let (mean, exact) = minibatch_expectation_check(&m3, &[0.2], 1).unwrap();
        assert!(((mean - exact) / exact).abs() < 1e-10);
        assert!(minibatch_expectation_check(&m3, &[0.2], 0).is_err());
        assert!(minibatch_expectation_check(&m3, &[0.2], 4).is_err());
    }

    #[test]
    fn enumeration_refuses_large_problems() {
        let n = 60;
        let ds = Dataset::new(vec![vec![1.0]; n], vec![vec![0.0]; n]).unwrap();
        let m = LinearGaussianModel::new(ds, vec![0.0], 1.0, 1.0).unwrap();
        assert!(matches!(
            minibatch_expectation_check(&m, &[0.0], 30),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sampled_batches_are_distinct_and_sorted() {
        let mut rng = stream_rng(1, 0, 0);
        let b = sample_batch(10, 4, &mut rng).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_batch(3, 4, &mut rng).is_err());
    }
}

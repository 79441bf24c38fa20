#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steinmix::model::{
    generate_wave_dataset, Activation, BnnRegressionModel, Dataset, LinearGaussianModel, NoiseModel,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Central differences of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, 1)` over coordinates.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn linear_model(n: usize, p: usize, seed: u64) -> LinearGaussianModel<f64> {
    let mut r = rng(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut r, p, -2.0, 2.0)).collect();
    let ys: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-3.0..3.0)]).collect();
    LinearGaussianModel::new(Dataset::new(xs, ys).unwrap(), vec![0.0; p], 2.0, 0.5).unwrap()
}

pub fn wave_bnn(hidden: usize, activation: Activation, noise: NoiseModel) -> BnnRegressionModel<f64> {
    BnnRegressionModel::new(generate_wave_dataset(10, 3), hidden, activation, noise).unwrap()
}

//! Evaluation metrics and the posterior-predictive sampler they consume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guide::Guide;
use crate::model::{Dataset, RegressionModel};
use crate::rng::stream_rng;
use crate::scalar::{log_sum_exp, Scalar};

/// Default number of predictive draws per evaluation.
pub const DEFAULT_PREDICTIVE_DRAWS: usize = 5000;

const PREDICTIVE_STEP: u64 = u64::MAX - 2;

fn check_samples<T>(samples: &[Vec<T>]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.len(),
            });
        }
    }
    Ok(d)
}

fn mean_of<T: Scalar>(samples: &[Vec<T>], d: usize) -> Vec<T> {
    let n = T::of_usize(samples.len());
    let mut mean = vec![T::zero(); d];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    mean
}

/// Unbiased per-coordinate variance of `samples[S][d]`.
pub fn dimension_marginal_variance<T: Scalar>(samples: &[Vec<T>]) -> Result<Vec<T>> {
    let d = check_samples(samples)?;
    let mean = mean_of(samples, d);
    let denom = T::of_usize(samples.len() - 1);
    let mut var = vec![T::zero(); d];
    for s in samples {
        for k in 0..d {
            let c = s[k] - mean[k];
            var[k] = var[k] + c * c;
        }
    }
    var.iter_mut().for_each(|v| *v = *v / denom);
    Ok(var)
}

/// Unbiased sample covariance.
pub fn covariance<T: Scalar>(samples: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let d = check_samples(samples)?;
    let mean = mean_of(samples, d);
    let denom = T::of_usize(samples.len() - 1);
    let centered: Vec<Vec<T>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(&v, &m)| v - m).collect())
        .collect();
    let cov = (0..d)
        .into_par_iter()
        .map(|a| {
            (0..d)
                .map(|b| centered.iter().map(|c| c[a] * c[b]).sum::<T>() / denom)
                .collect()
        })
        .collect();
    Ok(cov)
}

/// `‖C − I‖_F` for a square matrix `C`.
pub fn frobenius_distance_to_identity<T: Scalar>(cov: &[Vec<T>]) -> T {
    let mut acc = T::zero();
    for (a, row) in cov.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            let dev = if a == b { v - T::one() } else { v };
            acc = acc + dev * dev;
        }
    }
    acc.sqrt()
}

/// Frobenius distance between the sample covariance and the identity.
pub fn frobenius_to_identity<T: Scalar>(samples: &[Vec<T>]) -> Result<T> {
    Ok(frobenius_distance_to_identity(&covariance(samples)?))
}

/// Narrowest interval holding `ceil(mass·S)` of the samples.
/// Ties go to the lowest interval.
pub fn hdi<T: Scalar>(samples: &[T], mass: f64) -> Result<(T, T)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("hdi of an empty sample".into()));
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::InvalidInput(format!("hdi mass must be in (0, 1], got {mass}")));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("hdi sample contains NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered"));
    let s = sorted.len();
    // Shave off rounding so that e.g. 0.9 * 10 counts as 9, not 10.
    let k = ((mass * s as f64) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let k = k.min(s);
    let mut best = 0;
    let mut best_width = sorted[k - 1] - sorted[0];
    for start in 1..=(s - k) {
        let w = sorted[start + k - 1] - sorted[start];
        if w < best_width {
            best = start;
            best_width = w;
        }
    }
    Ok((sorted[best], sorted[best + k - 1]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Lppd<T> {
    pub value: T,
    /// Rows whose predictive density underflowed to zero.
    pub degenerate_rows: Vec<usize>,
}

impl<T: Scalar> Lppd<T> {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_rows.is_empty()
    }
}

/// `Σᵢ log((1/S) Σₛ exp(ℓ_is))` from log densities `ℓ[n][S]`.
pub fn lppd<T: Scalar>(log_densities: &[Vec<T>]) -> Result<Lppd<T>> {
    let mut value = T::zero();
    let mut degenerate_rows = Vec::new();
    for (i, row) in log_densities.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::InvalidInput(format!("lppd row {i} has no draws")));
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite {
                context: format!("lppd row {i}"),
                at: vec![f64::NAN],
            });
        }
        let r = log_sum_exp(row) - T::of_usize(row.len()).ln();
        if r == T::neg_infinity() {
            degenerate_rows.push(i);
        }
        value = value + r;
    }
    Ok(Lppd { value, degenerate_rows })
}

/// Same as [`lppd`] but from densities rather than log densities.
pub fn lppd_from_densities<T: Scalar>(densities: &[Vec<T>]) -> Result<Lppd<T>> {
    if densities.iter().flatten().any(|&p| p < T::zero()) {
        return Err(Error::InvalidInput("negative density".into()));
    }
    let logs: Vec<Vec<T>> = densities.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
    lppd(&logs)
}

/// Per-point mean negative log predictive density.
pub fn nll<T: Scalar>(lppd: T, n: usize) -> T {
    -lppd / T::of_usize(n)
}

pub fn rmse<T: Scalar>(predictions: &[Vec<T>], targets: &[Vec<T>]) -> Result<T> {
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("rmse of no targets".into()));
    }
    let mut acc = T::zero();
    let mut count = 0usize;
    for (p, t) in predictions.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: t.len(),
                got: p.len(),
            });
        }
        for (&a, &b) in p.iter().zip(t) {
            acc = acc + (a - b) * (a - b);
            count += 1;
        }
    }
    Ok((acc / T::of_usize(count)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryPoint {
    At(usize),
    /// Never recovered up to and including this particle count.
    AtLimit(usize),
}

impl RecoveryPoint {
    /// Numeric value for aggregation; a limit counts as twice the limit.
    pub fn as_ordinal(&self) -> usize {
        match *self {
            RecoveryPoint::At(n) => n,
            RecoveryPoint::AtLimit(n) => 2 * n,
        }
    }
}

impl std::fmt::Display for RecoveryPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecoveryPoint::At(n) => write!(f, "{n}"),
            RecoveryPoint::AtLimit(n) => write!(f, ">{n}"),
        }
    }
}

/// Smallest particle count in 1, 2, 4, ... whose SVGD LPPD beats `smi_lppd`.
pub fn recovery_point<F, E>(smi_lppd: f64, mut svgd_lppd: F, max_particles: usize) -> Result<RecoveryPoint, E>
where
    F: FnMut(usize) -> Result<f64, E>,
{
    let mut m = 1;
    while m <= max_particles {
        if svgd_lppd(m)? > smi_lppd {
            return Ok(RecoveryPoint::At(m));
        }
        m *= 2;
    }
    Ok(RecoveryPoint::AtLimit(max_particles))
}

/// θ draws from the particle mixture: a uniformly chosen particle, then a
/// draw from its guide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PredictiveSample<T> {
    pub particle: Vec<usize>,
    pub thetas: Vec<Vec<T>>,
}

impl<T: Scalar> PredictiveSample<T> {
    pub fn draw(guide: &Guide, particles: &[Vec<T>], n_draws: usize, seed: u64) -> Result<Self> {
        use rand::Rng;
        if particles.is_empty() || n_draws == 0 {
            return Err(Error::InvalidInput(
                "predictive sample needs particles and draws".into(),
            ));
        }
        for p in particles {
            if p.len() != guide.particle_dim() {
                return Err(Error::DimensionMismatch {
                    expected: guide.particle_dim(),
                    got: p.len(),
                });
            }
        }
        let mut rng = stream_rng(seed, PREDICTIVE_STEP, 0);
        let mut particle = Vec::with_capacity(n_draws);
        let mut thetas = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            let i = rng.random_range(0..particles.len());
            let theta = guide.sample(&particles[i], 1, &mut rng).pop().expect("one draw");
            particle.push(i);
            thetas.push(theta);
        }
        Ok(PredictiveSample { particle, thetas })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// Network outputs at `x`, one row per draw.
    pub fn outputs<M: RegressionModel<T> + ?Sized>(&self, model: &M, x: &[T]) -> Vec<Vec<T>> {
        self.thetas.iter().map(|t| model.predict(t, x)).collect()
    }

    pub fn mean_output<M: RegressionModel<T> + ?Sized>(&self, model: &M, x: &[T]) -> Vec<T> {
        let outs = self.outputs(model, x);
        let mut mean = vec![T::zero(); model.output_dim()];
        for o in &outs {
            for (m, &v) in mean.iter_mut().zip(o) {
                *m = *m + v;
            }
        }
        let n = T::of_usize(outs.len());
        mean.iter_mut().for_each(|m| *m = *m / n);
        mean
    }

    /// `log p(y | x, θ_s)` for every draw and every record.
    pub fn log_predictive_rows<M: RegressionModel<T> + ?Sized>(&self, model: &M, data: &Dataset<T>) -> Vec<Vec<T>> {
        (0..data.len())
            .into_par_iter()
            .map(|n| {
                let (x, y) = (&data.inputs()[n], &data.targets()[n]);
                self.thetas.iter().map(|t| model.log_predictive(t, x, y)).collect()
            })
            .collect()
    }

    pub fn lppd<M: RegressionModel<T> + ?Sized>(&self, model: &M, data: &Dataset<T>) -> Result<Lppd<T>> {
        lppd(&self.log_predictive_rows(model, data))
    }

    pub fn rmse<M: RegressionModel<T> + ?Sized>(&self, model: &M, data: &Dataset<T>) -> Result<T> {
        let means: Vec<Vec<T>> = (0..data.len())
            .into_par_iter()
            .map(|n| self.mean_output(model, &data.inputs()[n]))
            .collect();
        rmse(&means, data.targets())
    }

    /// HDI of the first output coordinate at `x`.
    pub fn hdi_at<M: RegressionModel<T> + ?Sized>(&self, model: &M, x: &[T], mass: f64) -> Result<(T, T)> {
        let vals: Vec<T> = self.thetas.iter().map(|t| model.predict(t, x)[0]).collect();
        hdi(&vals, mass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn marginal_variance_examples() {
        let same = vec![vec![3.0, -1.0]; 5];
        assert_eq!(dimension_marginal_variance(&same).unwrap(), vec![0.0, 0.0]);
        let pm = vec![vec![-1.0], vec![1.0]];
        assert_eq!(dimension_marginal_variance(&pm).unwrap(), vec![2.0]);
        assert!(dimension_marginal_variance(&[vec![1.0]]).is_err());
    }

    #[test]
    fn marginal_variance_of_normal_draws() {
        let mut rng = stream_rng(11, 0, 0);
        let s = 20_000;
        let samples: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..3).map(|_| crate::rng::standard_normal(&mut rng)).collect())
            .collect();
        let band = 4.0 * (2.0 / (s as f64 - 1.0)).sqrt();
        for v in dimension_marginal_variance(&samples).unwrap() {
            assert!((v - 1.0).abs() < band, "{v}");
        }
    }

    #[test]
    fn frobenius_examples() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(frobenius_distance_to_identity(&eye), 0.0);
        let two = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        assert!((frobenius_distance_to_identity(&two) - 2f64.sqrt()).abs() < 1e-15);
        let d = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(frobenius_distance_to_identity(&d), 1.0);
        // samples whose covariance is exactly I in 2D
        let s = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let c = covariance(&s).unwrap();
        assert_eq!(c, vec![vec![2.0 / 3.0, 0.0], vec![0.0, 2.0 / 3.0]]);
    }

    #[test]
    fn hdi_examples() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(hdi(&s, 0.9).unwrap(), (1.0, 9.0));
        assert_eq!(hdi(&[2.5; 7], 0.9).unwrap(), (2.5, 2.5));
        assert_eq!(hdi(&[3.0, -1.0, 7.0, 0.5], 1.0).unwrap(), (-1.0, 7.0));
        assert!(hdi::<f64>(&[], 0.9).is_err());
    }

    fn brute_hdi(samples: &[f64], k: usize) -> (f64, f64) {
        let mut best: Option<(f64, f64)> = None;
        // every interval spanned by two sample values that holds at least k points
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 0..sorted.len() {
            for j in i..sorted.len() {
                let (lo, hi) = (sorted[i], sorted[j]);
                let inside = samples.iter().filter(|&&v| v >= lo && v <= hi).count();
                if inside >= k {
                    let better = match best {
                        None => true,
                        Some((bl, bh)) => hi - lo < bh - bl || (hi - lo == bh - bl && lo < bl),
                    };
                    if better {
                        best = Some((lo, hi));
                    }
                }
            }
        }
        best.unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn hdi_matches_brute_force(v in prop::collection::vec(-50i32..50, 1..60), mass in 0.05f64..1.0) {
            let samples: Vec<f64> = v.iter().map(|&x| f64::from(x) * 0.25).collect();
            let k = ((mass * samples.len() as f64) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let (lo, hi) = hdi(&samples, mass).unwrap();
            let (blo, bhi) = brute_hdi(&samples, k);
            prop_assert_eq!(hi - lo, bhi - blo);
            prop_assert_eq!(lo, blo);
        }

        #[test]
        fn lppd_matches_naive(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 1..8), 1..6)) {
            let naive: f64 = rows
                .iter()
                .map(|r| (r.iter().map(|v| v.exp()).sum::<f64>() / r.len() as f64).ln())
                .sum();
            let l = lppd(&rows).unwrap();
            prop_assert!((l.value - naive).abs() < 1e-12);
            let doubled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().chain(r).copied().collect()).collect();
            prop_assert!((lppd(&doubled).unwrap().value - l.value).abs() < 1e-12);
        }
    }

    #[test]
    fn lppd_examples() {
        assert_eq!(lppd_from_densities(&[vec![1.0, 1.0], vec![1.0]]).unwrap().value, 0.0);
        let e = std::f64::consts::E;
        let l = lppd_from_densities(&[vec![1.0, e]]).unwrap();
        let expect = ((1.0 + e) / 2.0).ln();
        assert!((l.value - expect).abs() < 1e-15);
        assert!((l.value - 0.62011).abs() < 1e-5);
        assert!((nll(l.value, 1) + 0.62011).abs() < 1e-5);
        let z = lppd_from_densities(&[vec![0.0, 0.0], vec![1.0]]).unwrap();
        assert_eq!(z.value, f64::NEG_INFINITY);
        assert_eq!(z.degenerate_rows, vec![0]);
    }

    #[test]
    fn rmse_examples() {
        let t = vec![vec![1.0], vec![2.0], vec![-3.0]];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let off: Vec<Vec<f64>> = t.iter().map(|r| vec![r[0] + 1.0]).collect();
        assert_eq!(rmse(&off, &t).unwrap(), 1.0);
        assert!(rmse(&off[..2], &t).is_err());
    }

    #[test]
    fn recovery_point_examples() {
        assert_eq!(
            recovery_point(-5.0, |_| Ok::<_, Error>(0.0), 256).unwrap(),
            RecoveryPoint::At(1)
        );
        assert_eq!(
            recovery_point(0.0, |_| Ok::<_, Error>(-1.0), 256).unwrap(),
            RecoveryPoint::AtLimit(256)
        );
        assert_eq!(RecoveryPoint::AtLimit(256).to_string(), ">256");
        let mut asked = Vec::new();
        let r = recovery_point(
            -1.0,
            |m| {
                asked.push(m);
                Ok::<_, Error>(-8.0 / m as f64 + 0.1)
            },
            256,
        )
        .unwrap();
        assert_eq!(r, RecoveryPoint::At(8));
        assert_eq!(asked, vec![1, 2, 4, 8]);
    }
}

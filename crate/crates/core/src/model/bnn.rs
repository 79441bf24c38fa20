//! One-hidden-layer Bayesian neural network for regression.
//!
//! Parameter layout (row-major): `W1 [H×p]`, `b1 [H]`, `W2 [q×H]`, `b2 [q]`,
//! then one unconstrained precision coordinate `u` when the noise precision
//! is latent. All weights and biases have a standard normal prior.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::special::ln_gamma;
use crate::model::{check_indices, likelihood_scale, Batch, Dataset, LogJointModel, RegressionModel};
use crate::scalar::{half_ln_two_pi, sigmoid, softplus, tanh, to_f64_vec, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    FixedSigma(f64),
    /// `τ ~ Gamma(shape, rate)` on the precision, with `τ = softplus(u)` and
    /// `u` the last latent coordinate.
    GammaPrecision {
        shape: f64,
        rate: f64,
    },
}

impl NoiseModel {
    pub const DEFAULT_GAMMA: NoiseModel = NoiseModel::GammaPrecision { shape: 1.0, rate: 0.1 };
}

#[derive(Clone, Debug)]
pub struct BnnRegressionModel<T> {
    data: Dataset<T>,
    input_dim: usize,
    hidden: usize,
    output_dim: usize,
    activation: Activation,
    noise: NoiseModel,
}

impl<T: Scalar> BnnRegressionModel<T> {
    pub fn new(data: Dataset<T>, hidden: usize, activation: Activation, noise: NoiseModel) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("BNN needs at least one record".into()));
        }
        Self::with_shape(data.input_dim(), data.target_dim(), data, hidden, activation, noise)
    }

    /// Build with explicit shapes; `data` may be empty (prior-only model).
    pub fn with_shape(
        input_dim: usize,
        output_dim: usize,
        data: Dataset<T>,
        hidden: usize,
        activation: Activation,
        noise: NoiseModel,
    ) -> Result<Self> {
        if hidden == 0 || input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig("BNN dimensions must be >= 1".into()));
        }
        if !data.is_empty() {
            check_dim(input_dim, data.input_dim())?;
            check_dim(output_dim, data.target_dim())?;
        }
        match noise {
            NoiseModel::FixedSigma(s) if !(s > 0.0) => {
                return Err(Error::InvalidConfig(format!("noise sigma must be positive, got {s}")))
            }
            NoiseModel::GammaPrecision { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return Err(Error::InvalidConfig("Gamma shape and rate must be positive".into()))
            }
            _ => {}
        }
        Ok(BnnRegressionModel {
            data,
            input_dim,
            hidden,
            output_dim,
            activation,
            noise,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    fn n_weights(&self) -> usize {
        (self.input_dim + 1) * self.hidden + (self.hidden + 1) * self.output_dim
    }

    fn precision(&self, theta: &[T]) -> T {
        match self.noise {
            NoiseModel::FixedSigma(s) => T::one() / T::of(s * s),
            NoiseModel::GammaPrecision { .. } => softplus(theta[self.n_weights()]),
        }
    }

    /// Hidden pre-activations and activations, plus outputs.
    fn forward(&self, theta: &[T], x: &[T], pre: &mut [T], act: &mut [T], out: &mut [T]) {
        let (p, h, q) = (self.input_dim, self.hidden, self.output_dim);
        let w1 = &theta[..h * p];
        let b1 = &theta[h * p..h * p + h];
        let w2 = &theta[h * p + h..h * p + h + q * h];
        let b2 = &theta[h * p + h + q * h..h * p + h + q * h + q];
        for j in 0..h {
            let row = &w1[j * p..(j + 1) * p];
            let a = row.iter().zip(x).fold(b1[j], |acc, (&w, &xi)| acc + w * xi);
            pre[j] = a;
            act[j] = match self.activation {
                Activation::Tanh => tanh(a),
                Activation::Relu => a.max(T::zero()),
            };
        }
        for k in 0..q {
            let row = &w2[k * h..(k + 1) * h];
            out[k] = row.iter().zip(act.iter()).fold(b2[k], |acc, (&w, &z)| acc + w * z);
        }
    }
}

impl<T: Scalar> LogJointModel<T> for BnnRegressionModel<T> {
    fn latent_dim(&self) -> usize {
        self.n_weights() + matches!(self.noise, NoiseModel::GammaPrecision { .. }) as usize
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn log_prior(&self, theta: &[T]) -> T {
        let nw = self.n_weights();
        let c = half_ln_two_pi::<T>();
        let mut lp: T = theta[..nw].iter().map(|&w| -c - T::of(0.5) * w * w).sum();
        if let NoiseModel::GammaPrecision { shape, rate } = self.noise {
            let u = theta[nw];
            let tau = softplus(u);
            let (a, b) = (T::of(shape), T::of(rate));
            lp = lp + a * b.ln() - T::of(ln_gamma(shape)) + (a - T::one()) * tau.ln() - b * tau;
            // change of variables u -> τ: log |dτ/du| = log σ(u)
            lp = lp + sigmoid(u).ln();
        }
        lp
    }

    fn add_grad_log_prior(&self, theta: &[T], out: &mut [T]) {
        let nw = self.n_weights();
        for (o, &w) in out[..nw].iter_mut().zip(&theta[..nw]) {
            *o = *o - w;
        }
        if let NoiseModel::GammaPrecision { shape, rate } = self.noise {
            let u = theta[nw];
            let tau = softplus(u);
            let s = sigmoid(u);
            let dtau = (T::of(shape) - T::one()) / tau - T::of(rate);
            out[nw] = out[nw] + dtau * s + (T::one() - s);
        }
    }

    fn log_lik_point(&self, theta: &[T], n: usize) -> T {
        let mut pre = vec![T::zero(); self.hidden];
        let mut act = vec![T::zero(); self.hidden];
        let mut f = vec![T::zero(); self.output_dim];
        self.forward(theta, &self.data.inputs()[n], &mut pre, &mut act, &mut f);
        gaussian_log_lik(&self.data.targets()[n], &f, self.precision(theta))
    }

    fn add_grad_log_lik_point(&self, theta: &[T], n: usize, scale: T, out: &mut [T]) {
        let mut scratch = Scratch::new(self.hidden, self.output_dim);
        self.accumulate_point(theta, n, scale, self.precision(theta), &mut scratch, out);
    }

    fn grad_log_joint(&self, theta: &[T], batch: Batch<'_>) -> Result<Vec<T>> {
        let (_, g) = self.fused(theta, batch)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "grad_log_joint".into(),
                at: to_f64_vec(theta),
            });
        }
        Ok(g)
    }

    fn log_joint_and_grad(&self, theta: &[T], batch: Batch<'_>) -> Result<(T, Vec<T>)> {
        let (v, g) = self.fused(theta, batch)?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "log_joint_and_grad".into(),
                at: to_f64_vec(theta),
            });
        }
        Ok((v, g))
    }
}

struct Scratch<T> {
    pre: Vec<T>,
    act: Vec<T>,
    dact: Vec<T>,
    f: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(h: usize, q: usize) -> Self {
        Scratch {
            pre: vec![T::zero(); h],
            act: vec![T::zero(); h],
            dact: vec![T::zero(); h],
            f: vec![T::zero(); q],
        }
    }
}

impl<T: Scalar> BnnRegressionModel<T> {
    /// `out += scale · ∇ log p(yₙ | xₙ, θ)`; returns `log p(yₙ | xₙ, θ)`.
    fn accumulate_point(&self, theta: &[T], n: usize, scale: T, tau: T, sc: &mut Scratch<T>, out: &mut [T]) -> T {
        let (p, h, q) = (self.input_dim, self.hidden, self.output_dim);
        let x = &self.data.inputs()[n];
        let y = &self.data.targets()[n];
        self.forward(theta, x, &mut sc.pre, &mut sc.act, &mut sc.f);
        let (act, dact) = (&sc.act, &mut sc.dact);
        dact.iter_mut().for_each(|v| *v = T::zero());

        let w2_off = h * p + h;
        let b2_off = w2_off + q * h;
        let mut sq = T::zero();
        for k in 0..q {
            let resid = y[k] - sc.f[k];
            sq = sq + resid * resid;
            let r = scale * tau * resid;
            out[b2_off + k] = out[b2_off + k] + r;
            let w2 = &theta[w2_off + k * h..w2_off + (k + 1) * h];
            let g2 = &mut out[w2_off + k * h..w2_off + (k + 1) * h];
            for j in 0..h {
                g2[j] = g2[j] + r * act[j];
                dact[j] = dact[j] + r * w2[j];
            }
        }
        for j in 0..h {
            let da = match self.activation {
                Activation::Tanh => dact[j] * (T::one() - act[j] * act[j]),
                Activation::Relu => {
                    if sc.pre[j] > T::zero() {
                        dact[j]
                    } else {
                        T::zero()
                    }
                }
            };
            out[h * p + j] = out[h * p + j] + da;
            for i in 0..p {
                out[j * p + i] = out[j * p + i] + da * x[i];
            }
        }
        if let NoiseModel::GammaPrecision { .. } = self.noise {
            let nw = self.n_weights();
            let dtau = T::of_usize(q) / (T::of(2.0) * tau) - T::of(0.5) * sq;
            out[nw] = out[nw] + scale * dtau * sigmoid(theta[nw]);
        }
        T::of_usize(q) * (T::of(0.5) * tau.ln() - half_ln_two_pi::<T>()) - T::of(0.5) * tau * sq
    }

    /// Log joint and gradient in a single pass over the batch.
    fn fused(&self, theta: &[T], batch: Batch<'_>) -> Result<(T, Vec<T>)> {
        check_dim(self.latent_dim(), theta.len())?;
        let mut g = vec![T::zero(); theta.len()];
        self.add_grad_log_prior(theta, &mut g);
        let tau = self.precision(theta);
        let mut sc = Scratch::new(self.hidden, self.output_dim);
        let lik = match batch {
            Batch::Full => (0..self.data.len())
                .map(|i| self.accumulate_point(theta, i, T::one(), tau, &mut sc, &mut g))
                .sum::<T>(),
            Batch::Indices(idx) => {
                check_indices(idx, self.data.len())?;
                let scale = likelihood_scale::<T>(self.data.len(), idx.len());
                let s: T = idx
                    .iter()
                    .map(|&i| self.accumulate_point(theta, i, scale, tau, &mut sc, &mut g))
                    .sum();
                s * scale
            }
        };
        Ok((self.log_prior(theta) + lik, g))
    }
}

impl<T: Scalar> RegressionModel<T> for BnnRegressionModel<T> {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn predict(&self, theta: &[T], x: &[T]) -> Vec<T> {
        let mut pre = vec![T::zero(); self.hidden];
        let mut act = vec![T::zero(); self.hidden];
        let mut f = vec![T::zero(); self.output_dim];
        self.forward(theta, x, &mut pre, &mut act, &mut f);
        f
    }

    fn log_predictive(&self, theta: &[T], x: &[T], y: &[T]) -> T {
        let f = self.predict(theta, x);
        gaussian_log_lik(y, &f, self.precision(theta))
    }
}

fn gaussian_log_lik<T: Scalar>(y: &[T], f: &[T], tau: T) -> T {
    let c = T::of(0.5) * tau.ln() - half_ln_two_pi::<T>();
    y.iter()
        .zip(f)
        .map(|(&yk, &fk)| c - T::of(0.5) * tau * (yk - fk) * (yk - fk))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, uniform};

    fn small_data(n: usize, p: usize, q: usize, seed: u64) -> Dataset<f64> {
        let mut rng = stream_rng(seed, 0, 0);
        let xs = (0..n)
            .map(|_| (0..p).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
            .collect();
        let ys = (0..n)
            .map(|_| (0..q).map(|_| uniform(&mut rng, -2.0, 2.0)).collect())
            .collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn latent_dim_formula() {
        let d = small_data(4, 3, 2, 1);
        let m = BnnRegressionModel::new(d.clone(), 5, Activation::Tanh, NoiseModel::FixedSigma(0.1)).unwrap();
        assert_eq!(m.latent_dim(), 4 * 5 + 6 * 2);
        let m = BnnRegressionModel::new(d, 5, Activation::Relu, NoiseModel::DEFAULT_GAMMA).unwrap();
        assert_eq!(m.latent_dim(), 4 * 5 + 6 * 2 + 1);
        let wave = small_data(4, 1, 1, 1);
        let tiny = BnnRegressionModel::new(wave.clone(), 5, Activation::Tanh, NoiseModel::FixedSigma(0.1)).unwrap();
        assert_eq!(tiny.latent_dim(), 16);
        let small = BnnRegressionModel::new(wave, 100, Activation::Tanh, NoiseModel::FixedSigma(0.1)).unwrap();
        assert_eq!(small.latent_dim(), 301);
    }

    #[test]
    fn fused_pass_matches_separate_evaluation() {
        for (act, noise) in [
            (Activation::Tanh, NoiseModel::FixedSigma(0.3)),
            (Activation::Relu, NoiseModel::DEFAULT_GAMMA),
        ] {
            let m = BnnRegressionModel::new(small_data(6, 2, 2, 9), 4, act, noise).unwrap();
            let mut rng = stream_rng(3, 0, 0);
            let th: Vec<f64> = (0..m.latent_dim()).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            for batch in [Batch::Full, Batch::Indices(&[1, 4])] {
                let (v, g) = m.log_joint_and_grad(&th, batch).unwrap();
                let want = m.log_joint(&th, batch).unwrap();
                assert!((v - want).abs() <= 1e-12 * want.abs().max(1.0), "{v} vs {want}");
                let mut sep = vec![0.0; th.len()];
                m.add_grad_log_prior(&th, &mut sep);
                let (idx, scale): (Vec<usize>, f64) = match batch {
                    Batch::Full => ((0..6).collect(), 1.0),
                    Batch::Indices(i) => (i.to_vec(), 3.0),
                };
                for n in idx {
                    m.add_grad_log_lik_point(&th, n, scale, &mut sep);
                }
                for (a, b) in g.iter().zip(&sep) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn subset_matches_brute_force_rescaling() {
        let d = small_data(4, 1, 1, 2);
        let m = BnnRegressionModel::new(d, 2, Activation::Tanh, NoiseModel::FixedSigma(0.5)).unwrap();
        let mut rng = stream_rng(5, 0, 0);
        let th: Vec<f64> = (0..m.latent_dim()).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        // per-point log likelihood evaluated by hand
        let point = |n: usize| {
            let x = m.dataset().inputs()[n][0];
            let y = m.dataset().targets()[n][0];
            let (w1, b1, w2, b2) = (&th[0..2], &th[2..4], &th[4..6], th[6]);
            let f = b2 + (0..2).map(|j| w2[j] * (w1[j] * x + b1[j]).tanh()).sum::<f64>();
            -0.5 * (2.0 * std::f64::consts::PI * 0.25).ln() - (y - f).powi(2) / (2.0 * 0.25)
        };
        let prior: f64 = th
            .iter()
            .map(|w| -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * w * w)
            .sum();
        let want = prior + 2.0 * (point(0) + point(1));
        let got = m.log_joint(&th, Batch::Indices(&[0, 1])).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let full = m.log_joint(&th, Batch::Full).unwrap();
        assert_eq!(full, m.log_joint(&th, Batch::Indices(&[0, 1, 2, 3])).unwrap());
    }

    #[test]
    fn gamma_prior_normalizes() {
        // ∫ exp(log prior restricted to u) du = 1 since the Jacobian is included
        let m = BnnRegressionModel::<f64>::with_shape(
            1,
            1,
            Dataset::empty(),
            1,
            Activation::Tanh,
            NoiseModel::DEFAULT_GAMMA,
        )
        .unwrap();
        let nw = 4;
        let (lo, hi, n) = (-40.0, 200.0, 400_001);
        let h = (hi - lo) / (n - 1) as f64;
        let mut acc = 0.0;
        let mut th = vec![0.0; nw + 1];
        for i in 0..n {
            th[nw] = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let lp = m.log_prior(&th) + nw as f64 * 0.5 * (2.0 * std::f64::consts::PI).ln();
            acc += w * lp.exp();
        }
        assert!((acc * h - 1.0).abs() < 1e-6, "{}", acc * h);
    }

    #[test]
    fn constructor_validation() {
        let d = small_data(3, 1, 1, 0);
        assert!(BnnRegressionModel::new(d.clone(), 0, Activation::Tanh, NoiseModel::FixedSigma(0.1)).is_err());
        assert!(BnnRegressionModel::new(d.clone(), 2, Activation::Tanh, NoiseModel::FixedSigma(0.0)).is_err());
        assert!(BnnRegressionModel::new(
            d,
            2,
            Activation::Tanh,
            NoiseModel::GammaPrecision { shape: 1.0, rate: -1.0 }
        )
        .is_err());
        assert!(BnnRegressionModel::new(
            Dataset::<f64>::empty(),
            2,
            Activation::Tanh,
            NoiseModel::FixedSigma(0.1)
        )
        .is_err());
    }
}

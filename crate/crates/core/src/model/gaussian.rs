use crate::error::{check_dim, Error, Result};
use crate::model::{Dataset, LogJointModel};
use crate::scalar::{half_ln_two_pi, Scalar};

/// Isotropic Gaussian density `N(mean, variance · I)` with no data attached.
#[derive(Clone, Debug)]
pub struct GaussianTarget<T> {
    mean: Vec<T>,
    variance: T,
}

impl<T: Scalar> GaussianTarget<T> {
    pub fn new(mean: Vec<T>, variance: T) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidConfig("Gaussian target needs dim >= 1".into()));
        }
        if !(variance > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "marginal variance must be positive, got {variance}"
            )));
        }
        Ok(GaussianTarget { mean, variance })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![T::zero(); dim], T::one())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn variance(&self) -> T {
        self.variance
    }
}

impl<T: Scalar> LogJointModel<T> for GaussianTarget<T> {
    fn latent_dim(&self) -> usize {
        self.mean.len()
    }

    fn n_data(&self) -> usize {
        0
    }

    fn log_prior(&self, theta: &[T]) -> T {
        let c = half_ln_two_pi::<T>() + T::of(0.5) * self.variance.ln();
        theta
            .iter()
            .zip(&self.mean)
            .map(|(&t, &mu)| -c - (t - mu) * (t - mu) / (T::of(2.0) * self.variance))
            .sum()
    }

    fn add_grad_log_prior(&self, theta: &[T], out: &mut [T]) {
        for ((o, &t), &mu) in out.iter_mut().zip(theta).zip(&self.mean) {
            *o = *o - (t - mu) / self.variance;
        }
    }

    fn log_lik_point(&self, _theta: &[T], _n: usize) -> T {
        unreachable!("Gaussian target has no records")
    }

    fn add_grad_log_lik_point(&self, _theta: &[T], _n: usize, _scale: T, _out: &mut [T]) {
        unreachable!("Gaussian target has no records")
    }
}

/// Bayesian linear regression with known noise:
/// `θ ~ N(prior_mean, prior_var · I)`, `yₙ ~ N(xₙᵀθ, noise_var)`.
///
/// Conjugate, so the posterior and the evidence are available in closed form.
/// With every `xₙ = 1` this is the Gaussian location model.
#[derive(Clone, Debug)]
pub struct LinearGaussianModel<T> {
    data: Dataset<T>,
    prior_mean: Vec<T>,
    prior_var: T,
    noise_var: T,
}

impl<T: Scalar> LinearGaussianModel<T> {
    pub fn new(data: Dataset<T>, prior_mean: Vec<T>, prior_var: T, noise_var: T) -> Result<Self> {
        if !data.is_empty() {
            check_dim(prior_mean.len(), data.input_dim())?;
            check_dim(1, data.target_dim())?;
        }
        if prior_mean.is_empty() || !(prior_var > T::zero()) || !(noise_var > T::zero()) {
            return Err(Error::InvalidConfig(
                "linear Gaussian model needs dim >= 1 and positive variances".into(),
            ));
        }
        Ok(LinearGaussianModel {
            data,
            prior_mean,
            prior_var,
            noise_var,
        })
    }

    /// One-dimensional location model: `θ ~ N(prior_mean, prior_var)`, `yₙ ~ N(θ, noise_var)`.
    pub fn location(ys: &[T], prior_mean: T, prior_var: T, noise_var: T) -> Result<Self> {
        let data = Dataset::new(vec![vec![T::one()]; ys.len()], ys.iter().map(|&y| vec![y]).collect())?;
        Self::new(data, vec![prior_mean], prior_var, noise_var)
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.data
    }

    fn precision_and_shift(&self) -> (Vec<Vec<T>>, Vec<T>) {
        let d = self.prior_mean.len();
        let mut prec = vec![vec![T::zero(); d]; d];
        let mut shift: Vec<T> = self.prior_mean.iter().map(|&m| m / self.prior_var).collect();
        for (i, row) in prec.iter_mut().enumerate() {
            row[i] = T::one() / self.prior_var;
        }
        for (x, y) in self.data.inputs().iter().zip(self.data.targets()) {
            for i in 0..d {
                shift[i] = shift[i] + x[i] * y[0] / self.noise_var;
                for j in 0..d {
                    prec[i][j] = prec[i][j] + x[i] * x[j] / self.noise_var;
                }
            }
        }
        (prec, shift)
    }

    /// Posterior mean and covariance.
    pub fn posterior(&self) -> (Vec<T>, Vec<Vec<T>>) {
        let (prec, shift) = self.precision_and_shift();
        let l = cholesky(&prec);
        let mean = chol_solve(&l, &shift);
        let d = shift.len();
        let cov = (0..d)
            .map(|j| {
                let mut e = vec![T::zero(); d];
                e[j] = T::one();
                chol_solve(&l, &e)
            })
            .collect();
        (mean, cov)
    }

    /// `log p(D)`, from `log p(D|θ) + log p(θ) - log p(θ|D)` at the posterior mean.
    pub fn log_evidence(&self) -> T {
        let (prec, shift) = self.precision_and_shift();
        let l = cholesky(&prec);
        let mean = chol_solve(&l, &shift);
        let d = mean.len();
        // log N(μ | μ, Λ⁻¹) = -d/2 ln 2π + ½ ln |Λ|
        let half_log_det: T = l.iter().enumerate().map(|(i, row)| row[i].ln()).sum();
        let log_post = -T::of_usize(d) * half_ln_two_pi::<T>() + half_log_det;
        let lik: T = (0..self.data.len()).map(|n| self.log_lik_point(&mean, n)).sum();
        self.log_prior(&mean) + lik - log_post
    }
}

impl<T: Scalar> LogJointModel<T> for LinearGaussianModel<T> {
    fn latent_dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn log_prior(&self, theta: &[T]) -> T {
        let c = half_ln_two_pi::<T>() + T::of(0.5) * self.prior_var.ln();
        theta
            .iter()
            .zip(&self.prior_mean)
            .map(|(&t, &m)| -c - (t - m) * (t - m) / (T::of(2.0) * self.prior_var))
            .sum()
    }

    fn add_grad_log_prior(&self, theta: &[T], out: &mut [T]) {
        for ((o, &t), &m) in out.iter_mut().zip(theta).zip(&self.prior_mean) {
            *o = *o - (t - m) / self.prior_var;
        }
    }

    fn log_lik_point(&self, theta: &[T], n: usize) -> T {
        let r = self.residual(theta, n);
        -half_ln_two_pi::<T>() - T::of(0.5) * self.noise_var.ln() - r * r / (T::of(2.0) * self.noise_var)
    }

    fn add_grad_log_lik_point(&self, theta: &[T], n: usize, scale: T, out: &mut [T]) {
        let c = scale * self.residual(theta, n) / self.noise_var;
        for (o, &x) in out.iter_mut().zip(&self.data.inputs()[n]) {
            *o = *o + c * x;
        }
    }
}

impl<T: Scalar> LinearGaussianModel<T> {
    #[inline]
    fn residual(&self, theta: &[T], n: usize) -> T {
        let x = &self.data.inputs()[n];
        let f: T = x.iter().zip(theta).map(|(&a, &b)| a * b).sum();
        self.data.targets()[n][0] - f
    }
}

fn cholesky<T: Scalar>(a: &[Vec<T>]) -> Vec<Vec<T>> {
    let d = a.len();
    let mut l = vec![vec![T::zero(); d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: T = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

fn chol_solve<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let d = b.len();
    let mut z = vec![T::zero(); d];
    for i in 0..d {
        let s: T = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![T::zero(); d];
    for i in (0..d).rev() {
        let s: T = ((i + 1)..d).map(|k| l[k][i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i][i];
    }
    x
}

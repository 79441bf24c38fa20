//! Guides `q(θ | ψ)`: the parametric family each particle parameterizes.
//!
//! [`GaussianGuide`] is a factorized Gaussian with particle layout
//! `ψ = (loc, raw_scale)` and `scale = softplus(raw_scale)`, so particles live
//! in unconstrained space. [`PointMassGuide`] puts all mass on `θ = ψ`; with it
//! a Stein mixture degenerates to plain SVGD.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::standard_normal;
use crate::scalar::{half_ln_two_pi, log_sum_exp, sigmoid, softplus, softplus_inv, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianGuide {
    latent_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointMassGuide {
    latent_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Guide {
    Gaussian(GaussianGuide),
    PointMass(PointMassGuide),
}

/// How a flat particle vector splits into blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideLayout {
    pub loc_dim: usize,
    pub raw_scale_dim: usize,
}

impl GaussianGuide {
    pub fn new(latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidConfig("guide latent_dim must be >= 1".into()));
        }
        Ok(GaussianGuide { latent_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn particle_dim(&self) -> usize {
        2 * self.latent_dim
    }

    /// Particle with the given location and (positive) scale.
    pub fn particle<T: Scalar>(&self, loc: &[T], scale: &[T]) -> Result<Vec<T>> {
        check_dim(self.latent_dim, loc.len())?;
        check_dim(self.latent_dim, scale.len())?;
        if scale.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::InvalidInput("guide scales must be positive".into()));
        }
        Ok(loc
            .iter()
            .copied()
            .chain(scale.iter().map(|&s| softplus_inv(s)))
            .collect())
    }

    pub fn loc<'a, T>(&self, psi: &'a [T]) -> &'a [T] {
        &psi[..self.latent_dim]
    }

    pub fn scale<T: Scalar>(&self, psi: &[T]) -> Vec<T> {
        psi[self.latent_dim..].iter().map(|&r| softplus(r)).collect()
    }

    /// Reparameterized draws `θ = loc + scale ⊙ ε`, `ε ~ N(0, I)`.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, psi: &[T], n_draws: usize, rng: &mut R) -> Vec<Vec<T>> {
        let d = self.latent_dim;
        let scale = self.scale(psi);
        (0..n_draws)
            .map(|_| {
                (0..d)
                    .map(|i| psi[i] + scale[i] * standard_normal::<T, _>(rng))
                    .collect()
            })
            .collect()
    }

    pub fn log_density<T: Scalar>(&self, theta: &[T], psi: &[T]) -> T {
        self.component(psi).log_density(theta)
    }

    /// Per-component constants, computed once and reused across draws.
    pub(crate) fn component<T: Scalar>(&self, psi: &[T]) -> Component<T> {
        let d = self.latent_dim;
        let c = half_ln_two_pi::<T>();
        let mut inv_scale = Vec::with_capacity(d);
        let mut dscale = Vec::with_capacity(d);
        let mut log_norm = T::zero();
        for &raw in &psi[d..] {
            let s = softplus(raw);
            log_norm = log_norm - c - s.ln();
            inv_scale.push(T::one() / s);
            dscale.push(sigmoid(raw));
        }
        Component {
            loc: psi[..d].to_vec(),
            inv_scale,
            dscale,
            log_norm,
        }
    }

    /// `∇_ψ log q(θ | ψ)` in `(loc, raw_scale)` coordinates.
    pub fn grad_psi_log_density<T: Scalar>(&self, theta: &[T], psi: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.particle_dim()];
        self.add_score(theta, psi, T::one(), &mut out);
        out
    }

    /// `out += weight · ∇_ψ log q(θ | ψ)`.
    #[inline]
    pub(crate) fn add_score<T: Scalar>(&self, theta: &[T], psi: &[T], weight: T, out: &mut [T]) {
        self.component(psi).add_score(theta, weight, out);
    }

    /// `log[(1/m) Σ_ℓ q(θ | ψ_ℓ)]` via log-sum-exp.
    pub fn mixture_log_density<T: Scalar>(&self, particles: &[Vec<T>], theta: &[T]) -> Result<T> {
        if particles.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one particle".into()));
        }
        let mut logs: Vec<T> = particles.iter().map(|p| self.log_density(theta, p)).collect();
        // fixed summation order makes the result exactly permutation invariant
        logs.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Ok(log_sum_exp(&logs) - T::of_usize(particles.len()).ln())
    }

    /// Exact mean and covariance of the uniform mixture over `particles`.
    pub fn mixture_moments<T: Scalar>(&self, particles: &[Vec<T>]) -> (Vec<T>, Vec<Vec<T>>) {
        let d = self.latent_dim;
        let m = T::of_usize(particles.len());
        let mut mean = vec![T::zero(); d];
        for p in particles {
            for i in 0..d {
                mean[i] = mean[i] + p[i] / m;
            }
        }
        let mut cov = vec![vec![T::zero(); d]; d];
        for p in particles {
            let s = self.scale(p);
            for i in 0..d {
                let di = p[i] - mean[i];
                for j in 0..d {
                    cov[i][j] = cov[i][j] + di * (p[j] - mean[j]) / m;
                }
                cov[i][i] = cov[i][i] + s[i] * s[i] / m;
            }
        }
        (mean, cov)
    }

    pub fn layout(&self) -> GuideLayout {
        GuideLayout {
            loc_dim: self.latent_dim,
            raw_scale_dim: self.latent_dim,
        }
    }
}

pub(crate) struct Component<T> {
    pub(crate) loc: Vec<T>,
    pub(crate) inv_scale: Vec<T>,
    /// `d scale / d raw_scale`.
    pub(crate) dscale: Vec<T>,
    log_norm: T,
}

impl<T: Scalar> Component<T> {
    #[inline]
    pub(crate) fn log_density(&self, theta: &[T]) -> T {
        let mut q = T::zero();
        for ((&t, &l), &is) in theta.iter().zip(&self.loc).zip(&self.inv_scale) {
            let z = (t - l) * is;
            q = q + z * z;
        }
        self.log_norm - T::of(0.5) * q
    }

    /// `out += weight · ∇_ψ log q(θ | ψ)`.
    #[inline]
    pub(crate) fn add_score(&self, theta: &[T], weight: T, out: &mut [T]) {
        let d = self.loc.len();
        for i in 0..d {
            let diff = theta[i] - self.loc[i];
            let is = self.inv_scale[i];
            let inv_s2 = is * is;
            out[i] = out[i] + weight * diff * inv_s2;
            // d/ds log N = -1/s + diff²/s³, chained through ds/draw = σ(raw)
            let ds = (diff * diff * inv_s2 - T::one()) * is;
            out[d + i] = out[d + i] + weight * ds * self.dscale[i];
        }
    }
}

impl PointMassGuide {
    pub fn new(latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidConfig("guide latent_dim must be >= 1".into()));
        }
        Ok(PointMassGuide { latent_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn particle_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn sample<T: Scalar>(&self, psi: &[T], n_draws: usize) -> Vec<Vec<T>> {
        vec![psi.to_vec(); n_draws]
    }

    pub fn layout(&self) -> GuideLayout {
        GuideLayout {
            loc_dim: self.latent_dim,
            raw_scale_dim: 0,
        }
    }
}

impl Guide {
    pub fn gaussian(latent_dim: usize) -> Result<Self> {
        GaussianGuide::new(latent_dim).map(Guide::Gaussian)
    }

    pub fn point_mass(latent_dim: usize) -> Result<Self> {
        PointMassGuide::new(latent_dim).map(Guide::PointMass)
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Guide::Gaussian(g) => g.latent_dim(),
            Guide::PointMass(g) => g.latent_dim(),
        }
    }

    pub fn particle_dim(&self) -> usize {
        match self {
            Guide::Gaussian(g) => g.particle_dim(),
            Guide::PointMass(g) => g.particle_dim(),
        }
    }

    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, psi: &[T], n_draws: usize, rng: &mut R) -> Vec<Vec<T>> {
        match self {
            Guide::Gaussian(g) => g.sample(psi, n_draws, rng),
            Guide::PointMass(g) => g.sample(psi, n_draws),
        }
    }

    pub fn layout(&self) -> GuideLayout {
        match self {
            Guide::Gaussian(g) => g.layout(),
            Guide::PointMass(g) => g.layout(),
        }
    }
}

/// Serialized particle set: one flat `ψ` array per particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParticleSnapshot<T> {
    pub layout: GuideLayout,
    pub particles: Vec<Vec<T>>,
}

impl<T: Scalar> ParticleSnapshot<T> {
    pub fn new(guide: &Guide, particles: Vec<Vec<T>>) -> Result<Self> {
        for p in &particles {
            check_dim(guide.particle_dim(), p.len())?;
        }
        Ok(ParticleSnapshot {
            layout: guide.layout(),
            particles,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Self = serde_json::from_str(s)?;
        let width = snap.layout.loc_dim + snap.layout.raw_scale_dim;
        for p in &snap.particles {
            check_dim(width, p.len())?;
        }
        Ok(snap)
    }
}

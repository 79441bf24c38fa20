//! Per-particle gradients and the kernelized Stein direction.
//!
//! Convention: every per-particle gradient supplier returns `∇ᵢf`, the
//! gradient of the ensemble functional `f(ψ₁, …, ψ_m)` with respect to
//! particle `i`. For SVGD `f` is the mean log joint, so `∇ᵢf = (1/m) ∇ log p(θᵢ, D)`.
//! For SMI `f` is the mixture ELBO `L(ρ_m)`, and [`smi_attractive_grad`]
//! estimates `m ∇ᵢL`, which the engine scales by `1/m`. With a point-mass
//! guide `m ∇ᵢL = ∇ log p(ψᵢ, D)`, so both routes produce the same `∇ᵢf`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guide::{GaussianGuide, Guide};
use crate::kernel::Kernel;
use crate::model::{Batch, LogJointModel};
use crate::rng::stream_rng;
use crate::scalar::{all_finite, log_sum_exp, to_f64_vec, Scalar};

/// How the SMI attractive force `m ∇_{ψ_ℓ} L` is estimated for Gaussian guides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractiveEstimator {
    /// Score-function form, no baseline or control variates.
    #[default]
    ScoreFunction,
    /// Pathwise form `E_ε[Jᵀ(∇ log p(θ, D) − ∇_θ log Σ_j q_j(θ))]` with
    /// `θ = loc_ℓ + scale_ℓ ε`. The explicit-parameter term of the mixture
    /// density has zero mean and is dropped.
    Reparameterized,
}

/// Monte Carlo draws from every guide component together with the
/// log-densities the SMI estimators need.
///
/// Draws for component `i` at `step` come from stream `(seed, step, i)`.
#[derive(Clone, Debug)]
pub struct SmiDraws<T> {
    /// `draws[i][s]`: draw `s` from component `i`.
    draws: Vec<Vec<Vec<T>>>,
    log_joint: Vec<Vec<T>>,
    /// `log_q[i][s][j] = log q(θ_{i,s} | ψ_j)`.
    log_q: Vec<Vec<Vec<T>>>,
    /// `log Σ_j q(θ_{i,s} | ψ_j)`.
    log_sum_q: Vec<Vec<T>>,
    /// `∇ log p(θ_{i,s}, D)`, kept when the pathwise estimator will need it.
    grad_log_joint: Option<Vec<Vec<Vec<T>>>>,
}

/// `n_draws` reparameterized draws from each component.
pub fn sample_component_draws<T: Scalar>(
    guide: &GaussianGuide,
    particles: &[Vec<T>],
    n_draws: usize,
    seed: u64,
    step: u64,
) -> Vec<Vec<Vec<T>>> {
    particles
        .par_iter()
        .enumerate()
        .map(|(i, psi)| guide.sample(psi, n_draws, &mut stream_rng(seed, step, i as u64)))
        .collect()
}

impl<T: Scalar> SmiDraws<T> {
    pub fn sample<M: LogJointModel<T> + ?Sized>(
        model: &M,
        guide: &GaussianGuide,
        particles: &[Vec<T>],
        n_draws: usize,
        seed: u64,
        step: u64,
        batch: Batch<'_>,
    ) -> Result<Self> {
        if n_draws == 0 {
            return Err(Error::InvalidConfig("n_draws must be >= 1".into()));
        }
        let draws = sample_component_draws(guide, particles, n_draws, seed, step);
        Self::build(model, guide, particles, draws, batch, false)
    }

    /// As [`SmiDraws::sample`], also keeping `∇ log p` at every draw.
    pub fn sample_with_grads<M: LogJointModel<T> + ?Sized>(
        model: &M,
        guide: &GaussianGuide,
        particles: &[Vec<T>],
        n_draws: usize,
        seed: u64,
        step: u64,
        batch: Batch<'_>,
    ) -> Result<Self> {
        if n_draws == 0 {
            return Err(Error::InvalidConfig("n_draws must be >= 1".into()));
        }
        let draws = sample_component_draws(guide, particles, n_draws, seed, step);
        Self::build(model, guide, particles, draws, batch, true)
    }

    /// Evaluate densities at externally supplied draws.
    pub fn from_draws<M: LogJointModel<T> + ?Sized>(
        model: &M,
        guide: &GaussianGuide,
        particles: &[Vec<T>],
        draws: Vec<Vec<Vec<T>>>,
        batch: Batch<'_>,
    ) -> Result<Self> {
        Self::build(model, guide, particles, draws, batch, false)
    }

    fn build<M: LogJointModel<T> + ?Sized>(
        model: &M,
        guide: &GaussianGuide,
        particles: &[Vec<T>],
        draws: Vec<Vec<Vec<T>>>,
        batch: Batch<'_>,
        with_grads: bool,
    ) -> Result<Self> {
        if draws.len() != particles.len() || draws.iter().any(|d| d.is_empty()) {
            return Err(Error::InvalidInput("need >= 1 draw for every component".into()));
        }
        let components: Vec<_> = particles.iter().map(|p| guide.component(p)).collect();
        type PerComponent<T> = (Vec<T>, Vec<Vec<T>>, Vec<T>, Vec<Vec<T>>);
        let per_component: Vec<PerComponent<T>> = draws
            .par_iter()
            .map(|ds| {
                let mut lp = Vec::with_capacity(ds.len());
                let mut lq = Vec::with_capacity(ds.len());
                let mut lse = Vec::with_capacity(ds.len());
                let mut grads = Vec::new();
                for theta in ds {
                    if with_grads {
                        let (v, g) = model.log_joint_and_grad(theta, batch)?;
                        lp.push(v);
                        grads.push(g);
                    } else {
                        lp.push(model.log_joint(theta, batch)?);
                    }
                    let row: Vec<T> = components.iter().map(|c| c.log_density(theta)).collect();
                    lse.push(sorted_log_sum_exp(&row));
                    lq.push(row);
                }
                Ok((lp, lq, lse, grads))
            })
            .collect::<Result<_>>()?;
        let mut log_joint = Vec::with_capacity(draws.len());
        let mut log_q = Vec::with_capacity(draws.len());
        let mut log_sum_q = Vec::with_capacity(draws.len());
        let mut grad_log_joint = Vec::with_capacity(draws.len());
        for (lp, lq, lse, g) in per_component {
            log_joint.push(lp);
            log_q.push(lq);
            log_sum_q.push(lse);
            grad_log_joint.push(g);
        }
        let grad_log_joint = with_grads.then_some(grad_log_joint);
        Ok(SmiDraws {
            draws,
            log_joint,
            log_q,
            log_sum_q,
            grad_log_joint,
        })
    }

    pub fn draws(&self) -> &[Vec<Vec<T>>] {
        &self.draws
    }

    /// Estimate of `m ∇_{ψ_ℓ} L(ρ_m)`:
    ///
    /// ```text
    /// E_{q_ℓ}[∇ log q_ℓ(θ) · log(p(θ, D) / Σ_j q_j(θ))] − Σ_i E_{q_i}[q_ℓ(θ)/Σ_j q_j(θ) · ∇ log q_ℓ(θ)]
    /// ```
    pub fn attractive_grad(&self, guide: &GaussianGuide, particles: &[Vec<T>], ell: usize) -> Result<Vec<T>> {
        let m = particles.len();
        if ell >= m {
            return Err(Error::InvalidInput(format!(
                "particle index {ell} out of range for {m}"
            )));
        }
        let psi = &particles[ell];
        let comp = guide.component(psi);
        let mut out = vec![T::zero(); psi.len()];
        for i in 0..m {
            let inv_s = T::one() / T::of_usize(self.draws[i].len());
            for (s, theta) in self.draws[i].iter().enumerate() {
                let ratio = (self.log_q[i][s][ell] - self.log_sum_q[i][s]).exp();
                let mut w = -ratio;
                if i == ell {
                    w = w + (self.log_joint[i][s] - self.log_sum_q[i][s]);
                }
                comp.add_score(theta, w * inv_s, &mut out);
            }
        }
        if !all_finite(&out) {
            return Err(Error::NonFinite {
                context: format!("smi_attractive_grad for particle {ell}"),
                at: to_f64_vec(psi),
            });
        }
        Ok(out)
    }

    /// Pathwise estimate of `m ∇_{ψ_ℓ} L(ρ_m)` from component `ℓ`'s draws.
    pub fn attractive_grad_reparameterized<M: LogJointModel<T> + ?Sized>(
        &self,
        model: &M,
        guide: &GaussianGuide,
        particles: &[Vec<T>],
        ell: usize,
        batch: Batch<'_>,
    ) -> Result<Vec<T>> {
        let m = particles.len();
        if ell >= m {
            return Err(Error::InvalidInput(format!(
                "particle index {ell} out of range for {m}"
            )));
        }
        let d = guide.latent_dim();
        let psi = &particles[ell];
        let comps: Vec<_> = particles.iter().map(|p| guide.component(p)).collect();
        let own = &comps[ell];
        let inv_s = T::one() / T::of_usize(self.draws[ell].len());
        let mut out = vec![T::zero(); 2 * d];
        let mut delta = vec![T::zero(); d];
        for (s, theta) in self.draws[ell].iter().enumerate() {
            match &self.grad_log_joint {
                Some(g) => delta.copy_from_slice(&g[ell][s]),
                None => delta.copy_from_slice(&model.grad_log_joint(theta, batch)?),
            }
            for (j, c) in comps.iter().enumerate() {
                let r = (self.log_q[ell][s][j] - self.log_sum_q[ell][s]).exp();
                if r == T::zero() {
                    continue;
                }
                for k in 0..d {
                    delta[k] = delta[k] + r * (theta[k] - c.loc[k]) * c.inv_scale[k] * c.inv_scale[k];
                }
            }
            for k in 0..d {
                let eps = (theta[k] - own.loc[k]) * own.inv_scale[k];
                out[k] = out[k] + delta[k] * inv_s;
                out[d + k] = out[d + k] + delta[k] * eps * own.dscale[k] * inv_s;
            }
        }
        if !all_finite(&out) {
            return Err(Error::NonFinite {
                context: format!("reparameterized attractive force for particle {ell}"),
                at: to_f64_vec(psi),
            });
        }
        Ok(out)
    }

    /// `(1/m) Σ_ℓ mean_s[log p(θ_{ℓ,s}, D) − log q(θ_{ℓ,s} | ρ_m)]`.
    pub fn elbo(&self) -> T {
        let ln_m = T::of_usize(self.draws.len()).ln();
        let mut per: Vec<T> = (0..self.draws.len())
            .map(|i| {
                let s = self.draws[i].len();
                self.log_joint[i]
                    .iter()
                    .zip(&self.log_sum_q[i])
                    .map(|(&lp, &lse)| lp - (lse - ln_m))
                    .sum::<T>()
                    / T::of_usize(s)
            })
            .collect();
        // order-independent reduction over components
        per.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        per.iter().copied().sum::<T>() / T::of_usize(per.len())
    }

    /// Per-draw values `log p(θ, D) − log q(θ | ρ_m)` for component `i`.
    pub fn elbo_terms(&self, i: usize) -> Vec<T> {
        let ln_m = T::of_usize(self.draws.len()).ln();
        self.log_joint[i]
            .iter()
            .zip(&self.log_sum_q[i])
            .map(|(&lp, &lse)| lp - (lse - ln_m))
            .collect()
    }
}

fn sorted_log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    log_sum_exp(&v)
}

/// Monte Carlo estimate of `m ∇_{ψ_ℓ} L(ρ_m)` for particle `ell`.
///
/// Point-mass guides have `m ∇_{ψ_ℓ} L = ∇ log p(ψ_ℓ, D)` and need no draws.
#[allow(clippy::too_many_arguments)]
pub fn smi_attractive_grad<T: Scalar, M: LogJointModel<T> + ?Sized>(
    model: &M,
    guide: &Guide,
    particles: &[Vec<T>],
    ell: usize,
    n_draws: usize,
    seed: u64,
    step: u64,
    batch: Batch<'_>,
    estimator: AttractiveEstimator,
) -> Result<Vec<T>> {
    if ell >= particles.len() {
        return Err(Error::InvalidInput(format!(
            "particle index {ell} out of range for {}",
            particles.len()
        )));
    }
    match guide {
        Guide::PointMass(_) => model.grad_log_joint(&particles[ell], batch),
        Guide::Gaussian(g) => {
            let draws = match estimator {
                AttractiveEstimator::ScoreFunction => {
                    SmiDraws::sample(model, g, particles, n_draws, seed, step, batch)?
                }
                AttractiveEstimator::Reparameterized => {
                    SmiDraws::sample_with_grads(model, g, particles, n_draws, seed, step, batch)?
                }
            };
            match estimator {
                AttractiveEstimator::ScoreFunction => draws.attractive_grad(g, particles, ell),
                AttractiveEstimator::Reparameterized => {
                    draws.attractive_grad_reparameterized(model, g, particles, ell, batch)
                }
            }
        }
    }
}

/// `(1/m) ∇ log p(θ_ℓ, D)`: the SVGD instance of `∇ᵢf`.
pub fn svgd_grad<T: Scalar, M: LogJointModel<T> + ?Sized>(
    model: &M,
    particles: &[Vec<T>],
    ell: usize,
    batch: Batch<'_>,
) -> Result<Vec<T>> {
    let g = model.grad_log_joint(&particles[ell], batch)?;
    Ok(scale_by_inv_m(g, particles.len()))
}

/// Multiply by `1/m`, the conversion from `m ∇ᵢL` to `∇ᵢf`.
#[inline]
pub fn scale_by_inv_m<T: Scalar>(mut g: Vec<T>, m: usize) -> Vec<T> {
    let inv = T::one() / T::of_usize(m);
    for v in &mut g {
        *v = *v * inv;
    }
    g
}

/// Mixture ELBO estimate `L(ρ_m)` with `n_draws` draws per component.
pub fn elbo_estimate<T: Scalar, M: LogJointModel<T> + ?Sized>(
    model: &M,
    guide: &GaussianGuide,
    particles: &[Vec<T>],
    n_draws: usize,
    seed: u64,
    step: u64,
    batch: Batch<'_>,
) -> Result<T> {
    Ok(SmiDraws::sample(model, guide, particles, n_draws, seed, step, batch)?.elbo())
}

/// Kernelized Stein direction for every particle:
///
/// ```text
/// φ_ℓ = Σ_i k(ψ_i, ψ_ℓ) ∇ᵢf + (α/m) Σ_i ∇₁k(ψ_i, ψ_ℓ)
/// ```
///
/// All directions are computed from the same pre-step ensemble.
pub fn stein_directions<T: Scalar>(
    particles: &[Vec<T>],
    grads: &[Vec<T>],
    kernel: &Kernel<T>,
    alpha: T,
) -> Result<Vec<Vec<T>>> {
    let m = particles.len();
    if grads.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: grads.len(),
        });
    }
    let dim = particles.first().map_or(0, Vec::len);
    if particles.iter().chain(grads).any(|v| v.len() != dim) {
        return Err(Error::InvalidInput("particle and gradient widths differ".into()));
    }
    let rep_scale = alpha / T::of_usize(m);
    (0..m)
        .into_par_iter()
        .map(|ell| {
            let target = &particles[ell];
            let mut attract = vec![T::zero(); dim];
            let mut repulse = vec![T::zero(); dim];
            for (psi_i, g_i) in particles.iter().zip(grads) {
                let k = kernel.eval_unchecked(psi_i, target);
                for (a, &g) in attract.iter_mut().zip(g_i) {
                    *a = *a + k * g;
                }
                kernel.add_grad_first(psi_i, target, T::one(), &mut repulse);
            }
            let dir: Vec<T> = attract.iter().zip(&repulse).map(|(&a, &r)| a + rep_scale * r).collect();
            if !all_finite(&dir) {
                return Err(Error::NonFinite {
                    context: format!("Stein direction for particle {ell}"),
                    at: to_f64_vec(target),
                });
            }
            Ok(dir)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianTarget;

    #[test]
    fn single_particle_direction_is_gradient() {
        let k = Kernel::rbf(0.7_f64).unwrap();
        let p = vec![vec![0.3, -1.2]];
        let g = vec![vec![1.5, -0.25]];
        for alpha in [0.0, 1.0, 17.0] {
            assert_eq!(stein_directions(&p, &g, &k, alpha).unwrap(), g);
        }
    }

    #[test]
    fn coincident_particles_without_force_stay_put() {
        let k = Kernel::rbf(1.0_f64).unwrap();
        let p = vec![vec![0.5], vec![0.5]];
        let g = vec![vec![0.0], vec![0.0]];
        let d = stein_directions(&p, &g, &k, 0.0).unwrap();
        assert!(d.iter().flatten().all(|&v| v == 0.0));
        let d = stein_directions(&p, &g, &k, 1.0).unwrap();
        assert!(d.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn two_particle_hand_computation() {
        let h: f64 = 2.0;
        let k = Kernel::rbf(h).unwrap();
        let p: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![1.0, -1.0]];
        let g: Vec<Vec<f64>> = vec![vec![0.5, 2.0], vec![-1.0, 0.25]];
        let alpha = 0.8;
        let k01 = (-(1.0 + 4.0) / h).exp();
        // φ_0 = k00 g0 + k10 g1 + (α/2)[∇₁k(ψ0,ψ0) + ∇₁k(ψ1,ψ0)]
        // ∇₁k(ψ1,ψ0) = -(2/h)(ψ1 - ψ0) k
        let rep0 = [-(2.0 / h) * 1.0 * k01, -(2.0 / h) * (-2.0) * k01];
        let want0 = [
            0.5 - k01 + alpha / 2.0 * rep0[0],
            2.0 + k01 * 0.25 + alpha / 2.0 * rep0[1],
        ];
        let rep1 = [-(2.0 / h) * (-1.0) * k01, -(2.0 / h) * 2.0 * k01];
        let want1 = [
            k01 * 0.5 + -1.0 + alpha / 2.0 * rep1[0],
            k01 * 2.0 + 0.25 + alpha / 2.0 * rep1[1],
        ];
        let d = stein_directions(&p, &g, &k, alpha).unwrap();
        for i in 0..2 {
            assert!((d[0][i] - want0[i]).abs() < 1e-12);
            assert!((d[1][i] - want1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn svgd_grad_examples() {
        let model = GaussianTarget::<f64>::standard(1).unwrap();
        let origin = vec![vec![0.0]];
        assert_eq!(svgd_grad(&model, &origin, 0, Batch::Full).unwrap(), vec![0.0]);
        let sym = vec![vec![1.3], vec![-1.3]];
        let k = Kernel::rbf(1.0).unwrap();
        let grads: Vec<Vec<f64>> = (0..2)
            .map(|l| svgd_grad(&model, &sym, l, Batch::Full).unwrap())
            .collect();
        assert_eq!(grads, vec![vec![-0.65], vec![0.65]]);
        let d = stein_directions(&sym, &grads, &k, 1.0).unwrap();
        assert_eq!(d[0][0], -d[1][0]);
    }

    #[test]
    fn term2_ratio_is_half_for_identical_components() {
        let model = GaussianTarget::<f64>::standard(1).unwrap();
        let g = GaussianGuide::new(1).unwrap();
        let p = g.particle(&[0.2], &[0.9]).unwrap();
        let particles = vec![p.clone(), p];
        let draws = SmiDraws::sample(&model, &g, &particles, 3, 1, 0, Batch::Full).unwrap();
        for i in 0..2 {
            for s in 0..3 {
                let r = (draws.log_q[i][s][0] - draws.log_sum_q[i][s]).exp();
                assert!((r - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let k = Kernel::rbf(1.0_f64).unwrap();
        assert!(stein_directions(&[vec![0.0]], &[], &k, 1.0).is_err());
        assert!(stein_directions(&[vec![0.0]], &[vec![0.0, 1.0]], &k, 1.0).is_err());
        let model = GaussianTarget::<f64>::standard(1).unwrap();
        let guide = Guide::gaussian(1).unwrap();
        assert!(smi_attractive_grad(
            &model,
            &guide,
            &[vec![0.0, 0.0]],
            1,
            4,
            0,
            0,
            Batch::Full,
            AttractiveEstimator::ScoreFunction
        )
        .is_err());
        assert!(smi_attractive_grad(
            &model,
            &guide,
            &[vec![0.0, 0.0]],
            0,
            0,
            0,
            0,
            Batch::Full,
            AttractiveEstimator::ScoreFunction
        )
        .is_err());
    }
}

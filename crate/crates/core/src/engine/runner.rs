use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forces::{scale_by_inv_m, smi_attractive_grad, stein_directions, svgd_grad, AttractiveEstimator, SmiDraws};
use super::optim::OptimizerState;
use super::schedule::{asvgd_anneal, check_convergence};
use super::{EngineConfig, Method, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::guide::{GaussianGuide, Guide};
use crate::kernel::Kernel;
use crate::model::{sample_batch, Batch, LogJointModel};
use crate::rng::{stream_rng, uniform, BATCH_STREAM};
use crate::scalar::{softplus_inv, to_f64_vec, Scalar};

/// Step counter value reserved for initialization streams.
const INIT_STEP: u64 = u64::MAX - 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepRecord<T> {
    pub step: u64,
    /// Euclidean norm of all particles' update directions stacked together.
    pub force_norm: T,
    pub elbo: Option<T>,
    pub anneal: Option<T>,
    pub bandwidth: Option<T>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RunRecord<T> {
    pub steps: Vec<StepRecord<T>>,
    pub stopped_early: bool,
}

impl<T: Scalar> RunRecord<T> {
    pub fn force_norms(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.force_norm).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub config: EngineConfig,
    pub guide: Guide,
    pub step: u64,
    pub seed: u64,
    pub particles: Vec<Vec<T>>,
    pub optimizer: OptimizerState<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One kernelized Stein step: evaluate `∇ᵢf` for every particle, form the
/// Stein directions from the pre-step ensemble and hand them to the optimizer
/// as ascent directions. Returns the directions.
pub fn nsvgd_step<T, F>(
    particles: &mut [Vec<T>],
    per_particle_grad: F,
    kernel: &Kernel<T>,
    alpha: T,
    optimizer: &mut OptimizerState<T>,
) -> Result<Vec<Vec<T>>>
where
    T: Scalar,
    F: Fn(usize) -> Result<Vec<T>> + Sync,
{
    let grads: Vec<Vec<T>> = (0..particles.len())
        .into_par_iter()
        .map(&per_particle_grad)
        .collect::<Result<_>>()?;
    let dirs = stein_directions(particles, &grads, kernel, alpha)?;
    optimizer.ascend(particles, &dirs);
    Ok(dirs)
}

/// Gradient ascent on the single-guide ELBO, using the SMI estimator with one
/// component. Returns the ascent direction.
#[allow(clippy::too_many_arguments)]
pub fn ovi_step<T: Scalar, M: LogJointModel<T> + ?Sized>(
    model: &M,
    guide: &GaussianGuide,
    psi: &mut Vec<T>,
    n_draws: usize,
    optimizer: &mut OptimizerState<T>,
    seed: u64,
    step: u64,
    batch: Batch<'_>,
    estimator: AttractiveEstimator,
) -> Result<Vec<T>> {
    let one = std::slice::from_mut(psi);
    let draws = match estimator {
        AttractiveEstimator::ScoreFunction => SmiDraws::sample(model, guide, one, n_draws, seed, step, batch)?,
        AttractiveEstimator::Reparameterized => {
            SmiDraws::sample_with_grads(model, guide, one, n_draws, seed, step, batch)?
        }
    };
    let dir = match estimator {
        AttractiveEstimator::ScoreFunction => draws.attractive_grad(guide, one, 0)?,
        AttractiveEstimator::Reparameterized => draws.attractive_grad_reparameterized(model, guide, one, 0, batch)?,
    };
    optimizer.ascend(one, std::slice::from_ref(&dir));
    Ok(dir)
}

/// Gradient ascent on `log p(θ, D)`. Returns the ascent direction.
pub fn map_step<T: Scalar, M: LogJointModel<T> + ?Sized>(
    model: &M,
    theta: &mut Vec<T>,
    optimizer: &mut OptimizerState<T>,
    batch: Batch<'_>,
) -> Result<Vec<T>> {
    let dir = model.grad_log_joint(theta, batch)?;
    optimizer.ascend(std::slice::from_mut(theta), std::slice::from_ref(&dir));
    Ok(dir)
}

/// `m` points drawn uniformly from `[low, high]^dim`.
pub fn init_uniform_particles<T: Scalar>(m: usize, dim: usize, low: f64, high: f64, seed: u64) -> Vec<Vec<T>> {
    (0..m)
        .map(|i| {
            let mut rng = stream_rng(seed, INIT_STEP, i as u64);
            (0..dim).map(|_| uniform(&mut rng, low, high)).collect()
        })
        .collect()
}

/// Gaussian-guide particles with uniform locations in `loc_range` and either a
/// fixed scale or uniformly drawn raw (pre-softplus) scales.
pub fn init_gaussian_particles<T: Scalar>(
    guide: &GaussianGuide,
    m: usize,
    loc_range: (f64, f64),
    scale: ScaleInit,
    seed: u64,
) -> Vec<Vec<T>> {
    let d = guide.latent_dim();
    (0..m)
        .map(|i| {
            let mut rng = stream_rng(seed, INIT_STEP, i as u64);
            let mut p: Vec<T> = (0..d).map(|_| uniform(&mut rng, loc_range.0, loc_range.1)).collect();
            match scale {
                ScaleInit::Fixed(s) => p.extend(std::iter::repeat_n(softplus_inv(T::of(s)), d)),
                ScaleInit::UniformRaw(lo, hi) => p.extend((0..d).map(|_| uniform::<T, _>(&mut rng, lo, hi))),
            }
            p
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleInit {
    Fixed(f64),
    UniformRaw(f64, f64),
}

/// Drives an ensemble through repeated steps of the configured method.
pub struct Runner<'m, T, M: ?Sized> {
    model: &'m M,
    guide: Guide,
    config: EngineConfig,
    ensemble: ParticleEnsemble<T>,
    optimizer: OptimizerState<T>,
    record: RunRecord<T>,
}

impl<'m, T: Scalar, M: LogJointModel<T> + ?Sized> Runner<'m, T, M> {
    pub fn new(model: &'m M, guide: Guide, config: EngineConfig, ensemble: ParticleEnsemble<T>) -> Result<Self> {
        let optimizer = OptimizerState::new(config.optimizer, ensemble.len(), ensemble.dim());
        let runner = Runner {
            model,
            guide,
            config,
            ensemble,
            optimizer,
            record: RunRecord::default(),
        };
        runner.validate()?;
        Ok(runner)
    }

    pub fn resume(model: &'m M, checkpoint: Checkpoint<T>) -> Result<Self> {
        let mut ensemble = ParticleEnsemble::new(checkpoint.particles, checkpoint.seed)?;
        ensemble.step = checkpoint.step;
        let runner = Runner {
            model,
            guide: checkpoint.guide,
            config: checkpoint.config,
            ensemble,
            optimizer: checkpoint.optimizer,
            record: RunRecord::default(),
        };
        runner.validate()?;
        if runner.optimizer.config != runner.config.optimizer {
            return Err(Error::InvalidConfig(
                "checkpoint optimizer does not match config".into(),
            ));
        }
        Ok(runner)
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let m = self.ensemble.len();
        if self.guide.particle_dim() != self.ensemble.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.guide.particle_dim(),
                got: self.ensemble.dim(),
            });
        }
        if self.guide.latent_dim() != self.model.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.latent_dim(),
                got: self.guide.latent_dim(),
            });
        }
        let method = self.config.method;
        match (method, &self.guide) {
            (Method::Svgd | Method::Asvgd | Method::Map, Guide::Gaussian(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "{} operates on points; use a point-mass guide",
                    method.name()
                )))
            }
            (Method::Ovi, Guide::PointMass(_)) => {
                return Err(Error::InvalidConfig("ovi needs a Gaussian guide".into()))
            }
            _ => {}
        }
        if matches!(method, Method::Ovi | Method::Map) && m != 1 {
            return Err(Error::InvalidConfig(format!(
                "{} runs exactly one particle, got {m}",
                method.name()
            )));
        }
        if let Some(b) = self.config.batch_size {
            if b > self.model.n_data() {
                return Err(Error::InvalidConfig(format!(
                    "batch_size {b} exceeds dataset size {}",
                    self.model.n_data()
                )));
            }
        }
        Ok(())
    }

    pub fn ensemble(&self) -> &ParticleEnsemble<T> {
        &self.ensemble
    }

    pub fn particles(&self) -> &[Vec<T>] {
        &self.ensemble.particles
    }

    pub fn record(&self) -> &RunRecord<T> {
        &self.record
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn guide(&self) -> &Guide {
        &self.guide
    }

    pub fn into_parts(self) -> (ParticleEnsemble<T>, RunRecord<T>) {
        (self.ensemble, self.record)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            guide: self.guide,
            step: self.ensemble.step,
            seed: self.ensemble.seed,
            particles: self.ensemble.particles.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Run until `max_steps` or, when configured, until the convergence rule fires.
    pub fn run(&mut self) -> Result<&RunRecord<T>> {
        while (self.ensemble.step as usize) < self.config.max_steps {
            self.step()?;
            if let Some(w) = self.config.convergence {
                let norms = self.record.force_norms();
                if check_convergence(&norms, w) {
                    self.record.stopped_early = true;
                    break;
                }
            }
        }
        Ok(&self.record)
    }

    pub fn step(&mut self) -> Result<&StepRecord<T>> {
        let step = self.ensemble.step;
        let seed = self.ensemble.seed;
        let batch_idx = match self.config.batch_size {
            Some(b) => Some(sample_batch(
                self.model.n_data(),
                b,
                &mut stream_rng(seed, step, BATCH_STREAM),
            )?),
            None => None,
        };
        let batch = batch_idx.as_deref().map_or(Batch::Full, Batch::Indices);

        let model = self.model;
        let m = self.ensemble.len();
        let n_draws = self.config.n_elbo_draws;
        let mut entry = StepRecord {
            step,
            force_norm: T::zero(),
            elbo: None,
            anneal: None,
            bandwidth: None,
        };

        let dirs = match (self.config.method, self.guide) {
            (Method::Map, _) => {
                let theta = &mut self.ensemble.particles[0];
                vec![map_step(model, theta, &mut self.optimizer, batch)?]
            }
            (Method::Ovi, Guide::Gaussian(g)) if !self.config.ovi_via_nsvgd => {
                let psi = &mut self.ensemble.particles[0];
                if self.config.record_elbo {
                    let draws = SmiDraws::sample(model, &g, std::slice::from_ref(psi), n_draws, seed, step, batch)?;
                    entry.elbo = Some(draws.elbo());
                }
                vec![ovi_step(
                    model,
                    &g,
                    psi,
                    n_draws,
                    &mut self.optimizer,
                    seed,
                    step,
                    batch,
                    self.config.estimator,
                )?]
            }
            (method, guide) => {
                let kernel = Kernel::from_policy(self.config.bandwidth, &self.ensemble.particles)?;
                entry.bandwidth = Some(kernel.bandwidth());
                let alpha = if self.config.flip_repulsion {
                    -T::of(self.config.alpha)
                } else {
                    T::of(self.config.alpha)
                };
                let particles = &mut self.ensemble.particles;
                match (method, guide) {
                    (Method::Smi | Method::Ovi, Guide::Gaussian(g)) => {
                        let draws = match self.config.estimator {
                            AttractiveEstimator::ScoreFunction => {
                                SmiDraws::sample(model, &g, particles, n_draws, seed, step, batch)?
                            }
                            AttractiveEstimator::Reparameterized => {
                                SmiDraws::sample_with_grads(model, &g, particles, n_draws, seed, step, batch)?
                            }
                        };
                        if self.config.record_elbo {
                            entry.elbo = Some(draws.elbo());
                        }
                        let snapshot = particles.clone();
                        let estimator = self.config.estimator;
                        nsvgd_step(
                            particles,
                            |ell| {
                                let g = match estimator {
                                    AttractiveEstimator::ScoreFunction => draws.attractive_grad(&g, &snapshot, ell)?,
                                    AttractiveEstimator::Reparameterized => {
                                        draws.attractive_grad_reparameterized(model, &g, &snapshot, ell, batch)?
                                    }
                                };
                                Ok(scale_by_inv_m(g, m))
                            },
                            &kernel,
                            alpha,
                            &mut self.optimizer,
                        )?
                    }
                    (Method::Smi, Guide::PointMass(_)) => {
                        let snapshot = particles.clone();
                        nsvgd_step(
                            particles,
                            |ell| {
                                let g = smi_attractive_grad(
                                    model,
                                    &guide,
                                    &snapshot,
                                    ell,
                                    n_draws,
                                    seed,
                                    step,
                                    batch,
                                    AttractiveEstimator::ScoreFunction,
                                )?;
                                Ok(scale_by_inv_m(g, m))
                            },
                            &kernel,
                            alpha,
                            &mut self.optimizer,
                        )?
                    }
                    (Method::Svgd, _) => {
                        let snapshot = particles.clone();
                        nsvgd_step(
                            particles,
                            |ell| svgd_grad(model, &snapshot, ell, batch),
                            &kernel,
                            alpha,
                            &mut self.optimizer,
                        )?
                    }
                    (Method::Asvgd, _) => {
                        let gamma: T = asvgd_anneal(step, &self.config.anneal_schedule());
                        entry.anneal = Some(gamma);
                        let snapshot = particles.clone();
                        nsvgd_step(
                            particles,
                            |ell| {
                                let mut g = svgd_grad(model, &snapshot, ell, batch)?;
                                g.iter_mut().for_each(|v| *v = *v * gamma);
                                Ok(g)
                            },
                            &kernel,
                            alpha,
                            &mut self.optimizer,
                        )?
                    }
                    _ => unreachable!("method/guide pairing checked in validate"),
                }
            }
        };

        entry.force_norm = dirs.iter().flatten().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        if let Some(i) = self
            .ensemble
            .particles
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                context: format!("particle {i} after step {step}"),
                at: to_f64_vec(&self.ensemble.particles[i]),
            });
        }
        self.ensemble.step += 1;
        self.record.steps.push(entry);
        Ok(self.record.steps.last().expect("just pushed"))
    }
}

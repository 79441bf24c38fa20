//! Particle updates: the kernelized Stein step shared by SMI, SVGD and
//! annealed SVGD, plus the single-particle VI and MAP baselines.

mod forces;
mod optim;
mod runner;
mod schedule;

pub use forces::{
    elbo_estimate, sample_component_draws, scale_by_inv_m, smi_attractive_grad, stein_directions, svgd_grad,
    AttractiveEstimator, SmiDraws,
};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use runner::{
    init_gaussian_particles, init_uniform_particles, map_step, nsvgd_step, ovi_step, Checkpoint, RunRecord, Runner,
    ScaleInit, StepRecord,
};
pub use schedule::{asvgd_anneal, check_convergence, AnnealSchedule, ConvergenceWindows};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::BandwidthPolicy;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Stein mixture inference.
    Smi,
    Svgd,
    /// SVGD with a cyclically annealed attractive force.
    Asvgd,
    /// Ordinary (single-guide) variational inference.
    Ovi,
    Map,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Smi => "smi",
            Method::Svgd => "svgd",
            Method::Asvgd => "asvgd",
            Method::Ovi => "ovi",
            Method::Map => "map",
        }
    }

    /// Whether particles parameterize Gaussian guides rather than points.
    pub fn uses_guide(self) -> bool {
        matches!(self, Method::Smi | Method::Ovi)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smi" => Ok(Method::Smi),
            "svgd" => Ok(Method::Svgd),
            "asvgd" => Ok(Method::Asvgd),
            "ovi" => Ok(Method::Ovi),
            "map" => Ok(Method::Map),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub method: Method,
    /// Entropy scale; `1` makes the SMI objective an ELBO.
    pub alpha: f64,
    pub optimizer: OptimizerConfig,
    /// Draws per component for the SMI/VI force estimate.
    pub n_elbo_draws: usize,
    pub max_steps: usize,
    /// ASVGD only; defaults to [`AnnealSchedule::for_run`].
    pub anneal: Option<AnnealSchedule>,
    /// `None` uses the full dataset every step.
    pub batch_size: Option<usize>,
    pub bandwidth: BandwidthPolicy,
    /// Gaussian-guide attractive force estimator.
    #[serde(default)]
    pub estimator: AttractiveEstimator,
    /// Record the mixture ELBO estimate (SMI/OVI) each step.
    pub record_elbo: bool,
    /// Stop early with the force-norm rule.
    pub convergence: Option<ConvergenceWindows>,
    /// Route OVI through the Stein step with one particle.
    pub ovi_via_nsvgd: bool,
    /// Fault-injection hook for mutation testing: negates the repulsive force.
    #[doc(hidden)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flip_repulsion: bool,
}

impl EngineConfig {
    pub fn new(method: Method, optimizer: OptimizerConfig, max_steps: usize) -> Self {
        EngineConfig {
            method,
            alpha: 1.0,
            optimizer,
            n_elbo_draws: 1,
            max_steps,
            anneal: None,
            batch_size: None,
            bandwidth: BandwidthPolicy::Median,
            estimator: AttractiveEstimator::ScoreFunction,
            record_elbo: false,
            convergence: None,
            ovi_via_nsvgd: false,
            flip_repulsion: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.n_elbo_draws == 0 {
            return Err(Error::InvalidConfig("n_elbo_draws must be >= 1".into()));
        }
        if let BandwidthPolicy::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fixed bandwidth must be positive, got {h}"
                )));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        self.optimizer.validate()
    }

    pub fn anneal_schedule(&self) -> AnnealSchedule {
        self.anneal.unwrap_or_else(|| AnnealSchedule::for_run(self.max_steps))
    }
}

/// The `m` particles of the empirical measure `ρ_m = (1/m) Σ δ_{ψᵢ}`.
///
/// The random state is counter based, so `(seed, step)` is all a run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParticleEnsemble<T> {
    pub particles: Vec<Vec<T>>,
    pub step: u64,
    pub seed: u64,
}

impl<T: Scalar> ParticleEnsemble<T> {
    pub fn new(particles: Vec<Vec<T>>, seed: u64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidInput("ensemble needs at least one particle".into()));
        }
        let dim = particles[0].len();
        if dim == 0 || particles.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidInput("particles must share a non-zero width".into()));
        }
        if particles.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("particles must be finite".into()));
        }
        Ok(ParticleEnsemble {
            particles,
            step: 0,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }
}

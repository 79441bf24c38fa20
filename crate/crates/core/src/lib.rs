//! Particle-based variational inference.
//!
//! Stein mixture inference (SMI) moves `m` particles, each parameterizing a
//! guide `q(θ | ψ)`, so that the uniform mixture of guides maximizes a
//! mixture ELBO plus a kernelized entropy term. SVGD, annealed SVGD,
//! single-guide VI and MAP are provided as baselines and as the special cases
//! SMI reduces to.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`.
//!
//! ```
//! use steinmix::engine::{init_gaussian_particles, AttractiveEstimator, EngineConfig, Method, OptimizerConfig, Runner, ScaleInit};
//! use steinmix::guide::{GaussianGuide, Guide};
//! use steinmix::{GaussianTarget, ParticleEnsemble};
//!
//! let model = GaussianTarget::standard(2)?;
//! let guide = GaussianGuide::new(2)?;
//! let init = init_gaussian_particles(&guide, 3, (-2.0, 2.0), ScaleInit::Fixed(0.1), 0);
//! let mut cfg = EngineConfig::new(Method::Smi, OptimizerConfig::adagrad(0.05), 200);
//! cfg.estimator = AttractiveEstimator::Reparameterized;
//! let mut runner = Runner::new(&model, Guide::Gaussian(guide), cfg, ParticleEnsemble::new(init, 0)?)?;
//! runner.run()?;
//! assert_eq!(runner.particles().len(), 3);
//! # Ok::<(), steinmix::Error>(())
//! ```

// `!(x > 0.0)` checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod guide;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Kernel = kernel::Kernel<f64>;
pub type Dataset = model::Dataset<f64>;
pub type GaussianTarget = model::GaussianTarget<f64>;
pub type LinearGaussianModel = model::LinearGaussianModel<f64>;
pub type BnnRegressionModel = model::BnnRegressionModel<f64>;
pub type ParticleEnsemble = engine::ParticleEnsemble<f64>;
pub type RunRecord = engine::RunRecord<f64>;
pub type Checkpoint = engine::Checkpoint<f64>;
pub type ParticleSnapshot = guide::ParticleSnapshot<f64>;

pub type Kernel32 = kernel::Kernel<f32>;
pub type ParticleEnsemble32 = engine::ParticleEnsemble<f32>;

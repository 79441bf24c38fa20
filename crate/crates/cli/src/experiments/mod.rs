//! The experiments behind each subcommand.

mod csvreg;
mod recovery;
mod reg1d;
mod sanity;
mod variance;

pub use csvreg::run_csvreg;
pub use recovery::run_recovery;
pub use reg1d::run_regression1d;
pub use sanity::{run_sanity, SanityReport};
pub use variance::run_variance;

use anyhow::Result;
use serde::Serialize;
use steinmix::engine::{init_gaussian_particles, init_uniform_particles, ParticleEnsemble, Runner};
use steinmix::guide::{GaussianGuide, Guide};
use steinmix::model::{generate_wave_region, Dataset, LogJointModel, Region};

use crate::config::RunSpec;
use crate::output::MetricRow;

/// Everything an experiment writes.
#[derive(Debug, Default)]
pub struct Outputs {
    pub rows: Vec<MetricRow>,
    pub particles: Vec<ParticleRecord>,
    pub predictive: Vec<PredictiveRecord>,
    pub log: Vec<String>,
}

impl Outputs {
    fn absorb(&mut self, mut other: Outputs) {
        self.rows.append(&mut other.rows);
        self.particles.append(&mut other.particles);
        self.predictive.append(&mut other.predictive);
        self.log.append(&mut other.log);
    }

    /// Concatenate per-cell outputs in a fixed order.
    fn merge(cells: Vec<Outputs>) -> Outputs {
        let mut all = Outputs::default();
        for c in cells {
            all.absorb(c);
        }
        all.particles
            .sort_by(|a, b| (&a.cell, &a.method, a.seed).cmp(&(&b.cell, &b.method, b.seed)));
        all.predictive
            .sort_by(|a, b| (&a.cell, &a.method, a.seed).cmp(&(&b.cell, &b.method, b.seed)));
        all
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParticleRecord {
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub guide: Guide,
    pub particles: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PredictiveRecord {
    pub cell: String,
    pub method: String,
    pub seed: u64,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub hdi_low: Vec<f64>,
    pub hdi_high: Vec<f64>,
}

pub(crate) struct Fitted {
    pub guide: Guide,
    pub particles: Vec<Vec<f64>>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Initialize and run one method on `model`.
pub(crate) fn fit<M: LogJointModel<f64>>(model: &M, spec: &RunSpec, seed: u64) -> Result<Fitted> {
    fit_with(model, spec, spec.particles, seed, |_| {})
}

pub(crate) fn fit_with<M: LogJointModel<f64>>(
    model: &M,
    spec: &RunSpec,
    particles: usize,
    seed: u64,
    tweak: impl FnOnce(&mut steinmix::engine::EngineConfig),
) -> Result<Fitted> {
    let d = model.latent_dim();
    let (lo, hi, scale) = spec.scale_init();
    let (guide, init) = if spec.method.uses_guide() {
        let g = GaussianGuide::new(d)?;
        (
            Guide::Gaussian(g),
            init_gaussian_particles(&g, particles, (lo, hi), scale, seed),
        )
    } else {
        (
            Guide::point_mass(d)?,
            init_uniform_particles(particles, d, lo, hi, seed),
        )
    };
    let mut cfg = spec.engine_config();
    tweak(&mut cfg);
    let mut runner = Runner::new(model, guide, cfg, ParticleEnsemble::new(init, seed)?)?;
    runner.run()?;
    let (ensemble, record) = runner.into_parts();
    Ok(Fitted {
        guide,
        particles: ensemble.particles,
        steps: record.len(),
        stopped_early: record.stopped_early,
    })
}

/// Seed offset separating evaluation data from training data.
const EVAL_SEED_OFFSET: u64 = 1 << 32;

pub(crate) fn wave_train(points_per_cluster: usize, noise_sd: f64, seed: u64) -> Dataset<f64> {
    generate_wave_region(Region::In, 2 * points_per_cluster, noise_sd, seed)
}

pub(crate) fn wave_eval(region: Region, noise_sd: f64, seed: u64) -> Dataset<f64> {
    generate_wave_region(
        region,
        region.eval_size(),
        noise_sd,
        seed.wrapping_add(EVAL_SEED_OFFSET),
    )
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

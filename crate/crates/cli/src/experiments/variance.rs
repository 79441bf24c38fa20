use anyhow::Result;
use rayon::prelude::*;
use steinmix::guide::Guide;
use steinmix::metrics::{covariance, dimension_marginal_variance, frobenius_distance_to_identity, PredictiveSample};
use steinmix::model::GaussianTarget;

use super::{fit, Outputs, ParticleRecord};
use crate::config::VarianceConfig;
use crate::output::MetricRow;

const EXPERIMENT: &str = "variance";

/// Fit every method to standard Gaussians of each dimension and report the
/// spread of the resulting approximation.
pub fn run_variance(cfg: &VarianceConfig) -> Result<Outputs> {
    let cells: Vec<(usize, usize, u64)> = cfg
        .dims
        .iter()
        .flat_map(|&d| (0..cfg.runs.len()).flat_map(move |r| cfg.seeds.iter().map(move |&s| (d, r, s))))
        .collect();
    let outs = cells
        .par_iter()
        .map(|&(dim, r, seed)| variance_cell(cfg, dim, r, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Outputs::merge(outs))
}

fn variance_cell(cfg: &VarianceConfig, dim: usize, run: usize, seed: u64) -> Result<Outputs> {
    let spec = &cfg.runs[run];
    let model = GaussianTarget::<f64>::standard(dim)?;
    let fitted = fit(&model, spec, seed)?;
    let cell = format!("dim={dim}");
    let mut out = Outputs::default();
    let mut row = |metric: &str, value: f64| {
        out.rows.push(MetricRow::new(
            EXPERIMENT,
            cell.as_str(),
            &spec.label,
            seed,
            metric,
            value,
        ))
    };

    let samples = match fitted.guide {
        Guide::PointMass(_) => fitted.particles.clone(),
        Guide::Gaussian(_) => PredictiveSample::draw(&fitted.guide, &fitted.particles, cfg.mixture_draws, seed)?.thetas,
    };
    if samples.len() >= 2 {
        let var = dimension_marginal_variance(&samples)?;
        row("mean_marginal_variance", super::mean(&var));
        row(
            "min_marginal_variance",
            var.iter().copied().fold(f64::INFINITY, f64::min),
        );
        row(
            "max_marginal_variance",
            var.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        row(
            "frobenius_to_identity",
            frobenius_distance_to_identity(&covariance(&samples)?),
        );
    }
    let mean_loc = if let Guide::Gaussian(g) = fitted.guide {
        let (mean, cov) = g.mixture_moments(&fitted.particles);
        let var: Vec<f64> = (0..dim).map(|k| cov[k][k]).collect();
        row("mean_marginal_variance_exact", super::mean(&var));
        row(
            "min_marginal_variance_exact",
            var.iter().copied().fold(f64::INFINITY, f64::min),
        );
        row(
            "max_marginal_variance_exact",
            var.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        row("frobenius_to_identity_exact", frobenius_distance_to_identity(&cov));
        mean
    } else {
        let m = fitted.particles.len() as f64;
        (0..dim)
            .map(|k| fitted.particles.iter().map(|p| p[k]).sum::<f64>() / m)
            .collect()
    };
    row(
        "mean_abs_location",
        mean_loc.iter().map(|v| v.abs()).sum::<f64>() / dim as f64,
    );
    row("steps", fitted.steps as f64);
    out.log.push(format!(
        "variance dim={dim} {} seed={seed}: {} steps",
        spec.label, fitted.steps
    ));
    out.particles.push(ParticleRecord {
        cell,
        method: spec.label.clone(),
        seed,
        guide: fitted.guide,
        particles: fitted.particles,
    });
    Ok(out)
}

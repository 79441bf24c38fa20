use anyhow::Result;
use rayon::prelude::*;
use steinmix::metrics::{nll, PredictiveSample};
use steinmix::model::{BnnRegressionModel, Region, RegressionModel};

use super::{fit, wave_eval, wave_train, Outputs, ParticleRecord, PredictiveRecord};
use crate::config::Reg1dConfig;
use crate::output::MetricRow;

const EXPERIMENT: &str = "reg1d";

/// Fit BNNs to the two-cluster wave data and score them on every region.
pub fn run_regression1d(cfg: &Reg1dConfig) -> Result<Outputs> {
    let cells: Vec<(usize, usize, u64)> = (0..cfg.nets.len())
        .flat_map(|n| (0..cfg.runs.len()).flat_map(move |r| cfg.seeds.iter().map(move |&s| (n, r, s))))
        .collect();
    let outs = cells
        .par_iter()
        .map(|&(n, r, s)| cell(cfg, n, r, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Outputs::merge(outs))
}

fn cell(cfg: &Reg1dConfig, net_idx: usize, run_idx: usize, seed: u64) -> Result<Outputs> {
    let net = &cfg.nets[net_idx];
    let spec = &cfg.runs[run_idx];
    let train = wave_train(cfg.points_per_cluster, cfg.noise_sd, seed);
    let model = BnnRegressionModel::new(train, net.hidden, net.activation, net.noise)?;
    let fitted = fit(&model, spec, seed)?;
    let pred = PredictiveSample::draw(&fitted.guide, &fitted.particles, cfg.predictive_draws, seed)?;
    let mut out = Outputs::default();

    for region in Region::ALL {
        let eval = wave_eval(region, cfg.noise_sd, seed);
        let cell = format!("net={}/region={}", net.label, region.name());
        let lppd = pred.lppd(&model, &eval)?;
        let widths = eval
            .inputs()
            .iter()
            .map(|x| pred.hdi_at(&model, x, cfg.hdi_mass).map(|(lo, hi)| hi - lo))
            .collect::<steinmix::Result<Vec<f64>>>()?;
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
        row("lppd", lppd.value);
        row("nll_per_point", nll(lppd.value, eval.len()));
        row("rmse", pred.rmse(&model, &eval)?);
        row("mean_hdi_width", super::mean(&widths));
        if lppd.is_degenerate() {
            out.log.push(format!(
                "warning: {cell} {} seed={seed}: predictive density underflowed on {} points",
                spec.label,
                lppd.degenerate_rows.len()
            ));
        }
    }

    let n = cfg.grid_points;
    let x: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
    let mut rec = PredictiveRecord {
        cell: format!("net={}", net.label),
        method: spec.label.clone(),
        seed,
        x: x.clone(),
        mean: Vec::with_capacity(n),
        hdi_low: Vec::with_capacity(n),
        hdi_high: Vec::with_capacity(n),
    };
    for &xi in &x {
        let (lo, hi) = pred.hdi_at(&model, &[xi], cfg.hdi_mass)?;
        rec.mean.push(pred.mean_output(&model, &[xi])[0]);
        rec.hdi_low.push(lo);
        rec.hdi_high.push(hi);
    }
    debug_assert_eq!(model.output_dim(), 1);
    out.predictive.push(rec);
    out.log.push(format!(
        "reg1d net={} {} seed={seed}: {} steps{}",
        net.label,
        spec.label,
        fitted.steps,
        if fitted.stopped_early { " (converged early)" } else { "" }
    ));
    out.particles.push(ParticleRecord {
        cell: format!("net={}", net.label),
        method: spec.label.clone(),
        seed,
        guide: fitted.guide,
        particles: fitted.particles,
    });
    Ok(out)
}

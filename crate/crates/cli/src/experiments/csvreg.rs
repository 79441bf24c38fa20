use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use steinmix::metrics::{nll, PredictiveSample};
use steinmix::model::{load_csv_dataset, BnnRegressionModel, Dataset};

use super::{fit, Outputs};
use crate::config::CsvRegConfig;
use crate::output::MetricRow;

const EXPERIMENT: &str = "csvreg";

/// Random train/test split of a CSV dataset, scored by RMSE and per-point NLL.
pub fn run_csvreg(cfg: &CsvRegConfig) -> Result<Outputs> {
    let data: Dataset<f64> = load_csv_dataset(&cfg.data, &cfg.target_column, cfg.standardize_inputs)
        .with_context(|| format!("loading {}", cfg.data))?;
    if data.len() < 2 {
        bail!("csvreg.data: need at least two records, got {}", data.len());
    }
    let cells: Vec<(usize, u64)> = (0..cfg.runs.len())
        .flat_map(|r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let outs = cells
        .par_iter()
        .map(|&(r, s)| cell(cfg, &data, r, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Outputs::merge(outs))
}

pub(crate) fn split(data: &Dataset<f64>, test_fraction: f64, seed: u64) -> (Dataset<f64>, Dataset<f64>) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((data.len() as f64 * test_fraction).ceil() as usize).clamp(1, data.len() - 1);
    (data.permuted(&idx[n_test..]), data.permuted(&idx[..n_test]))
}

fn cell(cfg: &CsvRegConfig, data: &Dataset<f64>, run_idx: usize, seed: u64) -> Result<Outputs> {
    let spec = &cfg.runs[run_idx];
    let (train, test) = split(data, cfg.test_fraction, seed);
    let mut spec = spec.clone();
    if let Some(b) = spec.batch_size {
        spec.batch_size = Some(b.min(train.len()));
    }
    let model = BnnRegressionModel::new(train, cfg.net.hidden, cfg.net.activation, cfg.net.noise)?;
    let fitted = fit(&model, &spec, seed)?;
    let pred = PredictiveSample::draw(&fitted.guide, &fitted.particles, cfg.predictive_draws, seed)?;
    let lppd = pred.lppd(&model, &test)?;
    let cell = format!("net={}", cfg.net.label);
    let mut out = Outputs::default();
    out.rows.push(MetricRow::new(
        EXPERIMENT,
        cell.as_str(),
        &spec.label,
        seed,
        "rmse",
        pred.rmse(&model, &test)?,
    ));
    out.rows.push(MetricRow::new(
        EXPERIMENT,
        cell.as_str(),
        &spec.label,
        seed,
        "nll_per_point",
        nll(lppd.value, test.len()),
    ));
    out.log
        .push(format!("csvreg {} seed={seed}: {} steps", spec.label, fitted.steps));
    Ok(out)
}

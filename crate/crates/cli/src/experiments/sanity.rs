use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use steinmix::engine::{
    elbo_estimate, init_gaussian_particles, init_uniform_particles, smi_attractive_grad, AttractiveEstimator,
    EngineConfig, Method, OptimizerConfig, ParticleEnsemble, Runner, ScaleInit,
};
use steinmix::guide::{GaussianGuide, Guide};
use steinmix::kernel::Kernel;
use steinmix::metrics::dimension_marginal_variance;
use steinmix::model::{
    generate_wave_dataset, likelihood_scale, minibatch_expectation_check, Activation, Batch, BnnRegressionModel,
    Dataset, GaussianTarget, LinearGaussianModel, LogJointModel, NoiseModel,
};

use super::Outputs;
use crate::config::{Injection, SanityConfig};
use crate::output::MetricRow;

const EXPERIMENT: &str = "sanity";

#[derive(Clone, Debug, Serialize)]
pub struct SanityCheck {
    pub name: String,
    pub seed: u64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SanityReport {
    pub checks: Vec<SanityCheck>,
}

impl SanityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SanityCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Subsampled likelihood scaled by `(N/|I|)²`: a deliberately biased model.
struct WrongExponent<M>(M);

/// Run the invariant suites and report each as a pass/fail row.
pub fn run_sanity(cfg: &SanityConfig) -> Result<(Outputs, SanityReport)> {
    let mut report = SanityReport::default();
    for &seed in &cfg.seeds {
        let mut push = |name: &str, res: Result<(bool, String)>| {
            let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e:#}")));
            report.checks.push(SanityCheck {
                name: name.into(),
                seed,
                passed,
                detail,
            });
        };
        push("reduction_smi_point_mass_is_svgd", reduction_point_mass(cfg, seed));
        push("reduction_smi_single_is_ovi", reduction_single_guide(cfg, seed));
        push("reduction_svgd_single_is_map", reduction_map(cfg, seed));
        push("gradient_finite_differences", gradients(cfg, seed));
        push("minibatch_unbiasedness", minibatch(cfg, seed));
        push("estimator_unbiasedness", estimator(cfg, seed));
        push("elbo_below_evidence", elbo_bound(cfg, seed));
        push("svgd_variance_1d", variance_1d(cfg, seed));
    }
    let mut out = Outputs::default();
    for c in &report.checks {
        out.rows.push(MetricRow::new(
            EXPERIMENT,
            c.name.as_str(),
            "-",
            c.seed,
            "passed",
            c.passed as u8 as f64,
        ));
        out.log.push(format!(
            "{} {} seed={}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.seed,
            c.detail
        ));
    }
    Ok((out, report))
}

fn inject(cfg: &SanityConfig, engine: &mut EngineConfig) {
    engine.flip_repulsion = cfg.inject == Injection::FlipRepulsion;
}

fn trajectory<M: LogJointModel<f64>>(
    model: &M,
    guide: Guide,
    engine: EngineConfig,
    init: Vec<Vec<f64>>,
    seed: u64,
    steps: usize,
) -> Result<Vec<u64>> {
    let mut r = Runner::new(model, guide, engine, ParticleEnsemble::new(init, seed)?)?;
    let mut bits = Vec::new();
    for _ in 0..steps {
        r.step()?;
        bits.extend(r.particles().iter().flatten().map(|v| v.to_bits()));
    }
    Ok(bits)
}

fn identical(a: Vec<u64>, b: Vec<u64>) -> (bool, String) {
    match a.iter().zip(&b).position(|(x, y)| x != y) {
        None if a.len() == b.len() => (true, format!("{} coordinates bit-identical", a.len())),
        None => (false, "trajectory lengths differ".into()),
        Some(i) => (false, format!("first mismatch at flattened coordinate {i}")),
    }
}

fn reduction_point_mass(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let model = BnnRegressionModel::new(
        generate_wave_dataset(10, seed),
        5,
        Activation::Tanh,
        NoiseModel::FixedSigma(0.1),
    )?;
    let d = model.latent_dim();
    let init = init_uniform_particles(5, d, -0.5, 0.5, seed);
    let mut smi = EngineConfig::new(Method::Smi, OptimizerConfig::adam(0.01), cfg.reduction_steps);
    smi.batch_size = Some(8);
    inject(cfg, &mut smi);
    let mut svgd = smi.clone();
    svgd.method = Method::Svgd;
    let g = Guide::point_mass(d)?;
    let a = trajectory(&model, g, smi, init.clone(), seed, cfg.reduction_steps)?;
    let b = trajectory(&model, g, svgd, init, seed, cfg.reduction_steps)?;
    Ok(identical(a, b))
}

fn reduction_single_guide(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let model = conjugate_instance(seed, 3);
    let g = GaussianGuide::new(model.latent_dim())?;
    let init = init_gaussian_particles(&g, 1, (-1.0, 1.0), ScaleInit::Fixed(0.5), seed);
    let mut smi = EngineConfig::new(Method::Smi, OptimizerConfig::adam(0.01), cfg.reduction_steps);
    smi.n_elbo_draws = 4;
    inject(cfg, &mut smi);
    let mut ovi = smi.clone();
    ovi.method = Method::Ovi;
    let a = trajectory(&model, Guide::Gaussian(g), smi, init.clone(), seed, cfg.reduction_steps)?;
    let b = trajectory(&model, Guide::Gaussian(g), ovi, init, seed, cfg.reduction_steps)?;
    Ok(identical(a, b))
}

fn reduction_map(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let model = BnnRegressionModel::new(
        generate_wave_dataset(10, seed),
        5,
        Activation::Relu,
        NoiseModel::DEFAULT_GAMMA,
    )?;
    let d = model.latent_dim();
    let init = init_uniform_particles(1, d, -0.5, 0.5, seed);
    let mut svgd = EngineConfig::new(Method::Svgd, OptimizerConfig::adam(0.01), cfg.reduction_steps);
    inject(cfg, &mut svgd);
    let mut map = svgd.clone();
    map.method = Method::Map;
    let g = Guide::point_mass(d)?;
    let a = trajectory(&model, g, svgd, init.clone(), seed, cfg.reduction_steps)?;
    let b = trajectory(&model, g, map, init, seed, cfg.reduction_steps)?;
    Ok(identical(a, b))
}

/// Conjugate linear-Gaussian model with random design and targets.
pub(crate) fn conjugate_instance(seed: u64, dim: usize) -> LinearGaussianModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..9);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ys: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
    let prior_mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let prior_var = rng.random_range(0.5..3.0);
    let noise_var = rng.random_range(0.2..2.0);
    LinearGaussianModel::new(
        Dataset::new(xs, ys).expect("finite data"),
        prior_mean,
        prior_var,
        noise_var,
    )
    .expect("valid conjugate model")
}

fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn gradients(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_model: f64 = 0.0;
    let mut check = |model: &dyn LogJointModel<f64>, rng: &mut ChaCha8Rng| -> Result<()> {
        for _ in 0..cfg.fd_points {
            let theta: Vec<f64> = (0..model.latent_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = model.grad_log_joint(&theta, Batch::Full)?;
            let n = fd_grad(|t| model.log_joint(t, Batch::Full).expect("finite"), &theta);
            worst_model = worst_model.max(rel_err(&a, &n));
        }
        Ok(())
    };
    check(&GaussianTarget::new(vec![0.5, -1.0, 2.0], 0.7)?, &mut rng)?;
    check(&conjugate_instance(seed, 3), &mut rng)?;
    for act in [Activation::Tanh, Activation::Relu] {
        for noise in [NoiseModel::FixedSigma(0.3), NoiseModel::DEFAULT_GAMMA] {
            check(
                &BnnRegressionModel::new(generate_wave_dataset(5, seed), 5, act, noise)?,
                &mut rng,
            )?;
        }
    }

    let mut worst_guide: f64 = 0.0;
    let g = GaussianGuide::new(3)?;
    for _ in 0..cfg.fd_points {
        let psi: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = g.grad_psi_log_density(&theta, &psi);
        let n = fd_grad(|p| g.log_density(&theta, p), &psi);
        worst_guide = worst_guide.max(rel_err(&a, &n));
        let k = Kernel::rbf(rng.random_range(0.3..5.0))?;
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = k.grad_first(&theta, &y)?;
        let n = fd_grad(|x| k.eval(x, &y).expect("same length"), &theta);
        worst_guide = worst_guide.max(rel_err(&a, &n));
    }
    Ok((
        worst_model < 1e-5 && worst_guide < 1e-6,
        format!("max relative error: models {worst_model:.2e}, guide/kernel {worst_guide:.2e}"),
    ))
}

fn minibatch(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let wrong = cfg.inject == Injection::WrongMinibatchExponent;
    let mut worst: f64 = 0.0;
    let mut run = |model: &dyn LogJointModel<f64>, theta: &[f64]| -> Result<()> {
        for b in 1..=model.n_data() {
            let (mean, exact) = if wrong {
                minibatch_expectation_check(&WrongExponent(model), theta, b)?
            } else {
                minibatch_expectation_check(model, theta, b)?
            };
            worst = worst.max(((mean - exact) / exact).abs());
        }
        Ok(())
    };
    let lin = conjugate_instance(seed, 2);
    run(&lin, &[0.3, -0.6])?;
    let bnn = BnnRegressionModel::new(
        generate_wave_dataset(3, seed),
        3,
        Activation::Tanh,
        NoiseModel::DEFAULT_GAMMA,
    )?;
    let theta: Vec<f64> = (0..bnn.latent_dim()).map(|i| 0.1 * (i as f64).sin()).collect();
    run(&bnn, &theta)?;
    Ok((worst < 1e-10, format!("max relative deviation {worst:.2e}")))
}

impl<M: LogJointModel<f64> + ?Sized> LogJointModel<f64> for WrongExponent<&M> {
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }
    fn n_data(&self) -> usize {
        self.0.n_data()
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.0.log_prior(theta)
    }
    fn add_grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        self.0.add_grad_log_prior(theta, out)
    }
    fn log_lik_point(&self, theta: &[f64], n: usize) -> f64 {
        self.0.log_lik_point(theta, n)
    }
    fn add_grad_log_lik_point(&self, theta: &[f64], n: usize, scale: f64, out: &mut [f64]) {
        self.0.add_grad_log_lik_point(theta, n, scale, out)
    }
    fn log_joint(&self, theta: &[f64], batch: Batch<'_>) -> steinmix::Result<f64> {
        match batch {
            Batch::Full => self.0.log_joint(theta, batch),
            Batch::Indices(idx) => {
                let s: f64 = likelihood_scale(self.n_data(), idx.len());
                let lik: f64 = idx.iter().map(|&n| self.log_lik_point(theta, n)).sum();
                Ok(self.log_prior(theta) + s * s * lik)
            }
        }
    }
}

/// `L(ρ_m)` for a 1D model by trapezoid quadrature.
fn elbo_quadrature(model: &LinearGaussianModel<f64>, g: &GaussianGuide, particles: &[Vec<f64>]) -> f64 {
    let n = 20_001;
    let (lo, hi) = (-14.0, 14.0);
    let dx = (hi - lo) / (n - 1) as f64;
    let m = particles.len() as f64;
    let mut total = 0.0;
    for k in 0..n {
        let theta = [lo + dx * k as f64];
        let lp = model.log_joint(&theta, Batch::Full).expect("finite");
        let lmix = g.mixture_log_density(particles, &theta).expect("non-empty");
        let q: f64 = particles.iter().map(|p| g.log_density(&theta, p).exp()).sum::<f64>() / m;
        let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        total += w * q * (lp - lmix);
    }
    total * dx
}

fn estimator(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let model = LinearGaussianModel::location(&[0.8, 1.4, 0.3, 1.1], 0.0, 2.0, 0.7)?;
    let g = GaussianGuide::new(1)?;
    let all = [
        g.particle(&[0.2], &[0.6])?,
        g.particle(&[1.5], &[0.9])?,
        g.particle(&[-0.7], &[0.4])?,
    ];
    let n = cfg.unbiasedness_draws;
    let mut worst_z: f64 = 0.0;
    for est in [AttractiveEstimator::ScoreFunction, AttractiveEstimator::Reparameterized] {
        for m in 1..=3 {
            let ps = &all[..m];
            for ell in 0..m {
                for k in 0..2 {
                    let h = 1e-4;
                    let (mut up, mut down) = (ps.to_vec(), ps.to_vec());
                    up[ell][k] += h;
                    down[ell][k] -= h;
                    let oracle =
                        m as f64 * (elbo_quadrature(&model, &g, &up) - elbo_quadrature(&model, &g, &down)) / (2.0 * h);
                    let (mut s, mut s2) = (0.0, 0.0);
                    for step in 0..n as u64 {
                        let e =
                            smi_attractive_grad(&model, &Guide::Gaussian(g), ps, ell, 1, seed, step, Batch::Full, est)?
                                [k];
                        s += e;
                        s2 += e * e;
                    }
                    let mean = s / n as f64;
                    let se = ((s2 / n as f64 - mean * mean) / (n - 1) as f64).sqrt();
                    worst_z = worst_z.max((mean - oracle).abs() / se);
                }
            }
        }
    }
    Ok((
        worst_z <= 4.0,
        format!("largest deviation {worst_z:.2} standard errors"),
    ))
}

/// SMI fit to a random 1D conjugate model followed by a many-draw ELBO estimate.
pub(crate) fn elbo_bound_instance(seed: u64, mut tweak: impl FnMut(&mut EngineConfig)) -> Result<(f64, f64, f64)> {
    let model = conjugate_instance(seed, 1);
    let g = GaussianGuide::new(1)?;
    let init = init_gaussian_particles(&g, 3, (-2.0, 2.0), ScaleInit::Fixed(0.3), seed);
    let mut engine = EngineConfig::new(Method::Smi, OptimizerConfig::adagrad(0.05), 2000);
    engine.n_elbo_draws = 10;
    engine.estimator = AttractiveEstimator::Reparameterized;
    tweak(&mut engine);
    let mut r = Runner::new(&model, Guide::Gaussian(g), engine, ParticleEnsemble::new(init, seed)?)?;
    r.run()?;
    let reps = 200;
    let est = (0..reps)
        .map(|s| elbo_estimate(&model, &g, r.particles(), 100, seed ^ 0xE1B0, s, Batch::Full))
        .collect::<steinmix::Result<Vec<f64>>>()?;
    let mean = est.iter().sum::<f64>() / reps as f64;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    Ok((mean, (var / reps as f64).sqrt(), model.log_evidence()))
}

fn elbo_bound(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..cfg.elbo_instances as u64 {
        let (mean, se, log_z) = elbo_bound_instance(seed.wrapping_mul(1000).wrapping_add(i), |e| inject(cfg, e))?;
        worst = worst.max(mean + 4.0 * se - log_z);
    }
    Ok((worst <= 0.0, format!("max of (ELBO + 4 SE − log p(D)) = {worst:.3e}")))
}

fn variance_1d(cfg: &SanityConfig, seed: u64) -> Result<(bool, String)> {
    let model = GaussianTarget::<f64>::standard(1)?;
    let mut engine = EngineConfig::new(Method::Svgd, OptimizerConfig::sgd(0.1), 2000);
    inject(cfg, &mut engine);
    let init = init_uniform_particles(20, 1, -3.0, 3.0, seed);
    let mut r = Runner::new(
        &model,
        Guide::point_mass(1)?,
        engine,
        ParticleEnsemble::new(init, seed)?,
    )?;
    r.run()?;
    let v = dimension_marginal_variance(r.particles())?[0];
    Ok(((0.5..=1.5).contains(&v), format!("20-particle SVGD variance {v:.3}")))
}

mod common;

use steinmix::engine::*;
use steinmix::guide::{GaussianGuide, Guide};
use steinmix::model::{Activation, GaussianTarget, LinearGaussianModel, LogJointModel, NoiseModel};
use steinmix::Error;

fn smi_runner_config() -> EngineConfig {
    let mut cfg = EngineConfig::new(Method::Smi, OptimizerConfig::adam(0.01), 60);
    cfg.n_elbo_draws = 3;
    cfg.batch_size = Some(6);
    cfg.record_elbo = true;
    cfg
}

#[test]
fn checkpoint_resume_is_exact() {
    let model = common::wave_bnn(5, Activation::Tanh, NoiseModel::DEFAULT_GAMMA);
    let g = GaussianGuide::new(model.latent_dim()).unwrap();
    let init = init_gaussian_particles(&g, 4, (-0.1, 0.1), ScaleInit::UniformRaw(-0.1, 0.1), 1);
    let cfg = smi_runner_config();

    let mut straight = Runner::new(
        &model,
        Guide::Gaussian(g),
        cfg.clone(),
        ParticleEnsemble::new(init.clone(), 5).unwrap(),
    )
    .unwrap();
    straight.run().unwrap();

    let mut first = Runner::new(&model, Guide::Gaussian(g), cfg, ParticleEnsemble::new(init, 5).unwrap()).unwrap();
    for _ in 0..25 {
        first.step().unwrap();
    }
    let json = first.checkpoint().to_json().unwrap();
    let mut resumed = Runner::resume(&model, Checkpoint::from_json(&json).unwrap()).unwrap();
    resumed.run().unwrap();
    assert_eq!(resumed.ensemble().step, 60);
    assert_eq!(resumed.particles(), straight.particles());
    assert_eq!(resumed.record().steps[..], straight.record().steps[25..],);
}

#[test]
fn permuting_particles_permutes_the_result() {
    let model = common::linear_model(10, 2, 4);
    let d = model.latent_dim();
    let init = init_uniform_particles(4, d, -2.0, 2.0, 3);
    let perm = [2, 0, 3, 1];
    let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| init[i].clone()).collect();
    let cfg = EngineConfig::new(Method::Svgd, OptimizerConfig::adam(0.05), 30);
    let g = Guide::point_mass(d).unwrap();
    let mut a = Runner::new(&model, g, cfg.clone(), ParticleEnsemble::new(init, 0).unwrap()).unwrap();
    let mut b = Runner::new(&model, g, cfg, ParticleEnsemble::new(permuted, 0).unwrap()).unwrap();
    a.run().unwrap();
    b.run().unwrap();
    for (k, &i) in perm.iter().enumerate() {
        for (x, y) in b.particles()[k].iter().zip(&a.particles()[i]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn result_does_not_depend_on_thread_count() {
    let model = common::wave_bnn(5, Activation::Relu, NoiseModel::DEFAULT_GAMMA);
    let g = GaussianGuide::new(model.latent_dim()).unwrap();
    let init = init_gaussian_particles(&g, 5, (-0.1, 0.1), ScaleInit::UniformRaw(-0.1, 0.1), 2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut r = Runner::new(
                &model,
                Guide::Gaussian(g),
                smi_runner_config(),
                ParticleEnsemble::new(init.clone(), 9).unwrap(),
            )
            .unwrap();
            r.run().unwrap();
            r.particles().to_vec()
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn ovi_recovers_conjugate_posterior() {
    let model: LinearGaussianModel<f64> =
        LinearGaussianModel::location(&[0.8, 1.4, 0.3, 1.1, 0.9], 0.0, 2.0, 0.5).unwrap();
    let (mean, cov) = model.posterior();
    let g = GaussianGuide::new(1).unwrap();
    for est in [AttractiveEstimator::ScoreFunction, AttractiveEstimator::Reparameterized] {
        let mut cfg = EngineConfig::new(Method::Ovi, OptimizerConfig::adam(0.01), 4000);
        cfg.n_elbo_draws = 50;
        cfg.estimator = est;
        let init = vec![g.particle(&[-1.0], &[1.0]).unwrap()];
        let mut r = Runner::new(&model, Guide::Gaussian(g), cfg, ParticleEnsemble::new(init, 1).unwrap()).unwrap();
        r.run().unwrap();
        let p = &r.particles()[0];
        assert!((g.loc(p)[0] - mean[0]).abs() < 0.02, "{est:?} loc {}", g.loc(p)[0]);
        assert!(
            (g.scale(p)[0] - cov[0][0].sqrt()).abs() < 0.02,
            "{est:?} scale {}",
            g.scale(p)[0]
        );
    }
}

#[test]
fn smi_elbo_never_exceeds_evidence() {
    let model: LinearGaussianModel<f64> = LinearGaussianModel::location(&[0.2, -0.4, 1.0], 0.5, 1.5, 0.8).unwrap();
    let g = GaussianGuide::new(1).unwrap();
    let init = init_gaussian_particles(&g, 3, (-2.0, 2.0), ScaleInit::Fixed(0.3), 4);
    let mut cfg = EngineConfig::new(Method::Smi, OptimizerConfig::adagrad(0.05), 2000);
    cfg.n_elbo_draws = 20;
    cfg.estimator = AttractiveEstimator::Reparameterized;
    let mut r = Runner::new(&model, Guide::Gaussian(g), cfg, ParticleEnsemble::new(init, 2).unwrap()).unwrap();
    r.run().unwrap();
    let est: Vec<f64> = (0..200)
        .map(|s| elbo_estimate(&model, &g, r.particles(), 100, 77, s, steinmix::model::Batch::Full).unwrap())
        .collect();
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    assert!(mean < model.log_evidence());
}

#[test]
fn convergence_rule_stops_a_settled_run() {
    let model = GaussianTarget::<f64>::standard(2).unwrap();
    let mut cfg = EngineConfig::new(Method::Svgd, OptimizerConfig::sgd(0.1), 100_000);
    cfg.convergence = Some(ConvergenceWindows::default());
    let init = init_uniform_particles(5, 2, -3.0, 3.0, 0);
    let mut r = Runner::new(
        &model,
        Guide::point_mass(2).unwrap(),
        cfg,
        ParticleEnsemble::new(init, 0).unwrap(),
    )
    .unwrap();
    r.run().unwrap();
    assert!(r.record().stopped_early);
    assert!(r.record().len() < 100_000);
}

#[test]
fn invalid_pairings_are_rejected() {
    let model = GaussianTarget::<f64>::standard(2).unwrap();
    let gauss = Guide::gaussian(2).unwrap();
    let point = Guide::point_mass(2).unwrap();
    let two = ParticleEnsemble::new(vec![vec![0.0; 2]; 2], 0).unwrap();
    let wide = ParticleEnsemble::new(vec![vec![0.0; 4]; 2], 0).unwrap();
    let opt = OptimizerConfig::adam(0.1);
    let cfg = |m| EngineConfig::new(m, opt, 10);
    assert!(Runner::new(&model, gauss, cfg(Method::Svgd), wide.clone()).is_err());
    assert!(Runner::new(&model, point, cfg(Method::Ovi), two.clone()).is_err());
    assert!(Runner::new(&model, point, cfg(Method::Map), two.clone()).is_err());
    assert!(Runner::new(&model, gauss, cfg(Method::Smi), two.clone()).is_err());
    let mut batched = cfg(Method::Svgd);
    batched.batch_size = Some(3);
    assert!(Runner::new(&model, point, batched, two.clone()).is_err());
    assert!(Runner::new(&model, point, cfg(Method::Svgd), two).is_ok());
}

#[test]
fn divergence_is_reported() {
    let model = GaussianTarget::<f64>::standard(1).unwrap();
    let cfg = EngineConfig::new(Method::Map, OptimizerConfig::sgd(1e200), 10);
    let mut r = Runner::new(
        &model,
        Guide::point_mass(1).unwrap(),
        cfg,
        ParticleEnsemble::new(vec![vec![1e200]], 0).unwrap(),
    )
    .unwrap();
    let err = (0..10).map(|_| r.step().map(|_| ())).find(|s| s.is_err()).unwrap();
    assert!(matches!(err, Err(Error::NonFinite { .. })));
}

#[test]
fn flipped_repulsion_collapses_particles() {
    let model = GaussianTarget::<f64>::standard(1).unwrap();
    let init = init_uniform_particles(6, 1, -3.0, 3.0, 1);
    let spread = |flip: bool| {
        let mut cfg = EngineConfig::new(Method::Svgd, OptimizerConfig::sgd(0.1), 2000);
        cfg.flip_repulsion = flip;
        let mut r = Runner::new(
            &model,
            Guide::point_mass(1).unwrap(),
            cfg,
            ParticleEnsemble::new(init.clone(), 0).unwrap(),
        )
        .unwrap();
        r.run().unwrap();
        steinmix::metrics::dimension_marginal_variance(r.particles()).unwrap()[0]
    };
    let (a, b) = (spread(false), spread(true));
    assert!(a > 0.5 && b < a / 4.0, "{a} {b}");
}

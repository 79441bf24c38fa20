//! Experiment configuration: built-in presets, TOML overrides and validation.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steinmix::engine::{AttractiveEstimator, EngineConfig, Method, OptimizerConfig, ScaleInit};
use steinmix::kernel::BandwidthPolicy;
use steinmix::model::{Activation, NoiseModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Desk,
}

/// How a run's particles are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Every particle coordinate uniform in `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Gaussian guide: locations uniform in `[loc_low, loc_high]`, every scale
    /// set to `scale`.
    GuideFixedScale { loc_low: f64, loc_high: f64, scale: f64 },
}

/// One inference method with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Name used in output files, e.g. `smi-1`.
    pub label: String,
    pub method: Method,
    pub particles: usize,
    pub optimizer: OptimizerConfig,
    pub max_steps: usize,
    #[serde(default = "one")]
    pub n_draws: usize,
    #[serde(default = "one_f")]
    pub alpha: f64,
    #[serde(default)]
    pub estimator: AttractiveEstimator,
    pub init: InitSpec,
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Stop early with the force-norm rule.
    #[serde(default)]
    pub convergence: bool,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl RunSpec {
    pub fn engine_config(&self) -> EngineConfig {
        let mut cfg = EngineConfig::new(self.method, self.optimizer, self.max_steps);
        cfg.alpha = self.alpha;
        cfg.n_elbo_draws = self.n_draws;
        cfg.estimator = self.estimator;
        cfg.batch_size = self.batch_size;
        cfg.bandwidth = BandwidthPolicy::Median;
        if self.convergence {
            cfg.convergence = Some(Default::default());
        }
        cfg
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.label.is_empty() {
            bail!("{path}.label: must not be empty");
        }
        if self.particles == 0 {
            bail!("{path}.particles: must be >= 1");
        }
        if matches!(self.method, Method::Ovi | Method::Map) && self.particles != 1 {
            bail!("{path}.particles: {} runs exactly one particle", self.method.name());
        }
        match self.init {
            InitSpec::Uniform { low, high } if !(low < high) => bail!("{path}.init: empty range [{low}, {high}]"),
            InitSpec::GuideFixedScale {
                loc_low,
                loc_high,
                scale,
            } => {
                if !(loc_low < loc_high) {
                    bail!("{path}.init: empty range [{loc_low}, {loc_high}]");
                }
                if !(scale > 0.0) {
                    bail!("{path}.init.scale: must be positive");
                }
                if !self.method.uses_guide() {
                    bail!("{path}.init: {} has no guide scales", self.method.name());
                }
            }
            _ => {}
        }
        self.engine_config()
            .validate()
            .with_context(|| format!("{path}: invalid engine settings"))
    }

    pub(crate) fn scale_init(&self) -> (f64, f64, ScaleInit) {
        match self.init {
            InitSpec::Uniform { low, high } => (low, high, ScaleInit::UniformRaw(low, high)),
            InitSpec::GuideFixedScale {
                loc_low,
                loc_high,
                scale,
            } => (loc_low, loc_high, ScaleInit::Fixed(scale)),
        }
    }
}

fn check_seeds(seeds: &[u64], path: &str) -> Result<()> {
    if seeds.is_empty() {
        bail!("{path}: at least one seed required");
    }
    let mut s = seeds.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        bail!("{path}: seeds must be distinct");
    }
    Ok(())
}

fn check_runs(runs: &[RunSpec], path: &str) -> Result<()> {
    if runs.is_empty() {
        bail!("{path}: at least one run required");
    }
    for (i, r) in runs.iter().enumerate() {
        r.validate(&format!("{path}[{i}]"))?;
    }
    let mut labels: Vec<&str> = runs.iter().map(|r| r.label.as_str()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        bail!("{path}: labels must be distinct");
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Guide draws pooled over particles for the sampled SMI variance.
    pub mixture_draws: usize,
    pub runs: Vec<RunSpec>,
}

impl VarianceConfig {
    pub fn preset(scale: Scale) -> Self {
        let steps = match scale {
            Scale::Full => 60_000,
            Scale::Desk => 6_000,
        };
        let svgd = |label: &str, method| RunSpec {
            label: label.into(),
            method,
            particles: 20,
            optimizer: OptimizerConfig::adam(0.05),
            max_steps: steps,
            n_draws: 1,
            alpha: 1.0,
            estimator: AttractiveEstimator::Reparameterized,
            init: InitSpec::Uniform { low: -20.0, high: 20.0 },
            batch_size: None,
            convergence: false,
        };
        let smi = |label: &str, m| RunSpec {
            label: label.into(),
            method: Method::Smi,
            particles: m,
            optimizer: OptimizerConfig::adagrad(0.05),
            max_steps: steps,
            n_draws: 1,
            alpha: 1.0,
            estimator: AttractiveEstimator::Reparameterized,
            init: InitSpec::GuideFixedScale {
                loc_low: -2.0,
                loc_high: 2.0,
                scale: 0.1,
            },
            batch_size: None,
            convergence: false,
        };
        VarianceConfig {
            dims: match scale {
                Scale::Full => vec![1, 2, 4, 8, 10, 20, 40, 60, 80, 100],
                Scale::Desk => vec![1, 10, 50, 100],
            },
            seeds: vec![0],
            mixture_draws: 5000,
            runs: vec![
                svgd("svgd", Method::Svgd),
                svgd("asvgd", Method::Asvgd),
                smi("smi-1", 1),
                smi("smi-20", 20),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            bail!("variance.dims: need at least one positive dimension");
        }
        if self.mixture_draws < 2 {
            bail!("variance.mixture_draws: must be >= 2");
        }
        check_seeds(&self.seeds, "variance.seeds")?;
        check_runs(&self.runs, "variance.runs")
    }
}

/// BNN architecture for the wave experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub label: String,
    pub hidden: usize,
    pub activation: Activation,
    pub noise: NoiseModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reg1dConfig {
    pub nets: Vec<NetSpec>,
    pub seeds: Vec<u64>,
    /// Training points per cluster.
    pub points_per_cluster: usize,
    pub noise_sd: f64,
    pub predictive_draws: usize,
    pub hdi_mass: f64,
    /// Points on the `[-2, 2]` grid written to `predictive.json`.
    pub grid_points: usize,
    pub runs: Vec<RunSpec>,
}

pub(crate) fn wave_nets() -> Vec<NetSpec> {
    let net = |label: &str, hidden| NetSpec {
        label: label.into(),
        hidden,
        activation: Activation::Tanh,
        noise: NoiseModel::FixedSigma(0.1),
    };
    vec![net("tiny", 5), net("small", 100)]
}

/// Particle methods and baselines as run on the wave data.
pub(crate) fn wave_runs(scale: Scale, methods: &[&str]) -> Vec<RunSpec> {
    let (steps, ovi_steps, draws) = match scale {
        Scale::Full => (15_000, 50_000, 100),
        Scale::Desk => (15_000, 15_000, 100),
    };
    let base = |label: &str, method, particles, max_steps, n_draws| RunSpec {
        label: label.into(),
        method,
        particles,
        optimizer: OptimizerConfig::adam(0.001),
        max_steps,
        n_draws,
        alpha: 1.0,
        estimator: AttractiveEstimator::Reparameterized,
        init: InitSpec::Uniform { low: -0.1, high: 0.1 },
        batch_size: None,
        convergence: false,
    };
    let all = vec![
        base("smi", Method::Smi, 5, steps, draws),
        base("svgd", Method::Svgd, 5, steps, 1),
        base("asvgd", Method::Asvgd, 5, steps, 1),
        base("ovi", Method::Ovi, 1, ovi_steps, draws),
        base("map", Method::Map, 1, steps, 1),
    ];
    all.into_iter()
        .filter(|r| methods.contains(&r.label.as_str()))
        .collect()
}

impl Reg1dConfig {
    pub fn preset(scale: Scale) -> Self {
        Reg1dConfig {
            nets: wave_nets(),
            seeds: match scale {
                Scale::Full => (0..10).collect(),
                Scale::Desk => (0..3).collect(),
            },
            points_per_cluster: 20,
            noise_sd: 0.1,
            predictive_draws: match scale {
                Scale::Full => 5000,
                Scale::Desk => 1000,
            },
            hdi_mass: 0.9,
            grid_points: 101,
            runs: wave_runs(scale, &["smi", "svgd", "asvgd", "ovi", "map"]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_nets(&self.nets, "reg1d.nets")?;
        check_seeds(&self.seeds, "reg1d.seeds")?;
        if self.points_per_cluster == 0 {
            bail!("reg1d.points_per_cluster: must be >= 1");
        }
        if !(self.noise_sd >= 0.0) {
            bail!("reg1d.noise_sd: must be >= 0");
        }
        if self.predictive_draws == 0 {
            bail!("reg1d.predictive_draws: must be >= 1");
        }
        if !(self.hdi_mass > 0.0 && self.hdi_mass <= 1.0) {
            bail!("reg1d.hdi_mass: must be in (0, 1]");
        }
        if self.grid_points < 2 {
            bail!("reg1d.grid_points: must be >= 2");
        }
        check_runs(&self.runs, "reg1d.runs")
    }
}

fn check_nets(nets: &[NetSpec], path: &str) -> Result<()> {
    if nets.is_empty() {
        bail!("{path}: at least one network required");
    }
    for (i, n) in nets.iter().enumerate() {
        if n.hidden == 0 {
            bail!("{path}[{i}].hidden: must be >= 1");
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    pub nets: Vec<NetSpec>,
    pub seeds: Vec<u64>,
    pub points_per_cluster: usize,
    pub noise_sd: f64,
    pub predictive_draws: usize,
    /// Largest SVGD particle count tried.
    pub max_particles: usize,
    pub smi: RunSpec,
    pub svgd: RunSpec,
}

impl RecoveryConfig {
    pub fn preset(scale: Scale) -> Self {
        let mut runs = wave_runs(scale, &["smi", "svgd"]);
        let svgd = runs.pop().expect("svgd run");
        let smi = runs.pop().expect("smi run");
        RecoveryConfig {
            nets: match scale {
                Scale::Full => wave_nets(),
                Scale::Desk => wave_nets()[..1].to_vec(),
            },
            seeds: match scale {
                Scale::Full => (0..10).collect(),
                Scale::Desk => (0..5).collect(),
            },
            points_per_cluster: 20,
            noise_sd: 0.1,
            predictive_draws: match scale {
                Scale::Full => 5000,
                Scale::Desk => 1000,
            },
            max_particles: match scale {
                Scale::Full => 256,
                Scale::Desk => 64,
            },
            smi,
            svgd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_nets(&self.nets, "recovery.nets")?;
        check_seeds(&self.seeds, "recovery.seeds")?;
        if self.max_particles == 0 {
            bail!("recovery.max_particles: must be >= 1");
        }
        if self.predictive_draws == 0 {
            bail!("recovery.predictive_draws: must be >= 1");
        }
        self.smi.validate("recovery.smi")?;
        self.svgd.validate("recovery.svgd")?;
        if self.svgd.method != Method::Svgd {
            bail!("recovery.svgd.method: must be svgd");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvRegConfig {
    /// Header-first CSV file; empty means the config must be completed on the
    /// command line.
    pub data: String,
    pub target_column: String,
    pub standardize_inputs: bool,
    pub test_fraction: f64,
    pub net: NetSpec,
    pub seeds: Vec<u64>,
    pub predictive_draws: usize,
    pub runs: Vec<RunSpec>,
}

impl CsvRegConfig {
    pub fn preset(scale: Scale) -> Self {
        let steps = match scale {
            Scale::Full => 50_000,
            Scale::Desk => 2_000,
        };
        let mut runs = wave_runs(scale, &["smi", "svgd", "ovi", "map"]);
        for r in &mut runs {
            r.max_steps = steps;
            r.optimizer = OptimizerConfig::adam(0.002);
            r.batch_size = Some(100);
        }
        CsvRegConfig {
            data: String::new(),
            target_column: "y".into(),
            standardize_inputs: true,
            test_fraction: 0.1,
            net: NetSpec {
                label: "relu50".into(),
                hidden: 50,
                activation: Activation::Relu,
                noise: NoiseModel::DEFAULT_GAMMA,
            },
            seeds: match scale {
                Scale::Full => (0..10).collect(),
                Scale::Desk => vec![0],
            },
            predictive_draws: match scale {
                Scale::Full => 5000,
                Scale::Desk => 500,
            },
            runs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_empty() {
            bail!("csvreg.data: path to a CSV file is required");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!("csvreg.test_fraction: must be in (0, 1)");
        }
        check_nets(std::slice::from_ref(&self.net), "csvreg.net")?;
        check_seeds(&self.seeds, "csvreg.seeds")?;
        if self.predictive_draws == 0 {
            bail!("csvreg.predictive_draws: must be >= 1");
        }
        check_runs(&self.runs, "csvreg.runs")
    }
}

/// Fault injected into the sanity suite to show that it detects it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    #[default]
    None,
    /// Negate the repulsive force.
    FlipRepulsion,
    /// Scale subsampled likelihoods by `(N/|I|)²` instead of `N/|I|`.
    WrongMinibatchExponent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanityConfig {
    pub seeds: Vec<u64>,
    pub reduction_steps: usize,
    pub unbiasedness_draws: usize,
    pub fd_points: usize,
    pub elbo_instances: usize,
    #[serde(default)]
    pub inject: Injection,
}

impl SanityConfig {
    pub fn preset(scale: Scale) -> Self {
        SanityConfig {
            seeds: vec![0],
            reduction_steps: 100,
            unbiasedness_draws: match scale {
                Scale::Full => 100_000,
                Scale::Desk => 20_000,
            },
            fd_points: match scale {
                Scale::Full => 100,
                Scale::Desk => 20,
            },
            elbo_instances: match scale {
                Scale::Full => 20,
                Scale::Desk => 5,
            },
            inject: Injection::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_seeds(&self.seeds, "sanity.seeds")?;
        if self.reduction_steps == 0 || self.unbiasedness_draws < 2 || self.fd_points == 0 || self.elbo_instances == 0 {
            bail!("sanity: step, draw, point and instance counts must be positive");
        }
        Ok(())
    }
}

/// Preset for `scale`, overlaid with the optional TOML file and then with
/// `key=value` overrides (dotted keys, TOML values).
pub fn resolve<C: Serialize + DeserializeOwned>(preset: C, file: Option<&Path>, overrides: &[String]) -> Result<C> {
    let mut table = toml::Table::try_from(&preset).context("serializing preset")?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let user: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut table, user);
    }
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .with_context(|| format!("override `{ov}` is not key=value"))?;
        let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        set_path(&mut table, key.trim(), parsed).with_context(|| format!("applying override `{ov}`"))?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow::anyhow!("invalid configuration: {e}"))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(p) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(p.to_string(), value);
            return Ok(());
        }
        cur = match cur.get_mut(p) {
            Some(toml::Value::Table(t)) => t,
            Some(_) => bail!("`{p}` is not a table"),
            None => bail!("unknown key `{p}`"),
        };
    }
    bail!("empty key")
}

/// Short stable digest of the resolved configuration.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let text = toml::to_string(config).context("serializing config")?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in [Scale::Full, Scale::Desk] {
            VarianceConfig::preset(s).validate().unwrap();
            Reg1dConfig::preset(s).validate().unwrap();
            RecoveryConfig::preset(s).validate().unwrap();
            SanityConfig::preset(s).validate().unwrap();
            let mut c = CsvRegConfig::preset(s);
            assert!(c.validate().is_err());
            c.data = "x.csv".into();
            c.validate().unwrap();
        }
    }

    #[test]
    fn overrides_apply_and_bad_keys_fail() {
        let c: VarianceConfig = resolve(
            VarianceConfig::preset(Scale::Desk),
            None,
            &["dims=[3, 4]".into(), "mixture_draws=10".into()],
        )
        .unwrap();
        assert_eq!(c.dims, vec![3, 4]);
        assert_eq!(c.mixture_draws, 10);
        let err = resolve(VarianceConfig::preset(Scale::Desk), None, &["nope=1".into()]);
        assert!(err.is_err());
        let err = resolve(VarianceConfig::preset(Scale::Desk), None, &["dims.x=1".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn file_overlay_and_validation_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seeds = [1, 1]\n").unwrap();
        let c: VarianceConfig = resolve(VarianceConfig::preset(Scale::Desk), Some(&p), &[]).unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("variance.seeds"), "{msg}");
        std::fs::write(&p, "[[runs]]\nlabel = \"x\"\n").unwrap();
        assert!(resolve(VarianceConfig::preset(Scale::Desk), Some(&p), &[]).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = VarianceConfig::preset(Scale::Desk);
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seeds = vec![5];
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }
}

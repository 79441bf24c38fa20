use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use steinmix_cli::config::{
    config_hash, resolve, CsvRegConfig, Injection, RecoveryConfig, Reg1dConfig, SanityConfig, Scale, VarianceConfig,
};
use steinmix_cli::experiments::{self, Outputs};
use steinmix_cli::output::OutDir;

/// Run Stein mixture inference experiments.
#[derive(Parser)]
#[command(name = "steinmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file overlaid on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Preset size.
    #[arg(long, value_enum, default_value_t = Scale::Full)]
    scale: Scale,
    /// Override a configuration key, e.g. `--set dims=[1,10]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Marginal variance of particle methods on standard Gaussians.
    Variance(Common),
    /// 1D wave regression with predictive intervals.
    Reg1d(Common),
    /// Particles SVGD needs to match a 5-particle SMI fit.
    Recovery(Common),
    /// BNN regression on a CSV file.
    Csvreg {
        #[command(flatten)]
        common: Common,
        /// CSV file with a header row.
        #[arg(long)]
        data: Option<String>,
    },
    /// Invariant checks; exits nonzero on failure.
    Sanity {
        #[command(flatten)]
        common: Common,
        /// Inject a known fault.
        #[arg(long, value_enum)]
        inject: Option<Injection>,
    },
}

trait Seeded {
    fn seeds_mut(&mut self) -> &mut Vec<u64>;
}

macro_rules! seeded {
    ($($t:ty),*) => {$(
        impl Seeded for $t {
            fn seeds_mut(&mut self) -> &mut Vec<u64> {
                &mut self.seeds
            }
        }
    )*};
}
seeded!(VarianceConfig, Reg1dConfig, RecoveryConfig, CsvRegConfig, SanityConfig);

fn load<C: Serialize + DeserializeOwned + Seeded>(preset: C, common: &Common) -> Result<C> {
    let mut cfg = resolve(preset, common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        *cfg.seeds_mut() = vec![seed];
    }
    Ok(cfg)
}

fn write_outputs<C: Serialize>(name: &str, cfg: &C, out: &Path, outputs: Outputs) -> Result<()> {
    let hash = config_hash(cfg)?;
    let mut dir = OutDir::create(out)?;
    dir.log(format!(
        "steinmix {} {name} config_hash={hash}",
        steinmix_cli::output::VERSION
    ));
    for line in &outputs.log {
        dir.log(line);
    }
    dir.write("config.toml", &toml::to_string(cfg).context("serializing config")?)?;
    dir.write_metrics(&outputs.rows, &hash)?;
    dir.write_json("particles.json", &outputs.particles)?;
    dir.write_json("predictive.json", &outputs.predictive)?;
    dir.finish()
}

fn print_config<C: Serialize>(cfg: &C) -> Result<()> {
    print!("{}", toml::to_string(cfg)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Variance(c) => {
            let cfg = load(VarianceConfig::preset(c.scale), &c)?;
            if c.print_config {
                return print_config(&cfg).map(|_| true);
            }
            cfg.validate()?;
            write_outputs("variance", &cfg, &c.out, experiments::run_variance(&cfg)?)?;
        }
        Command::Reg1d(c) => {
            let cfg = load(Reg1dConfig::preset(c.scale), &c)?;
            if c.print_config {
                return print_config(&cfg).map(|_| true);
            }
            cfg.validate()?;
            write_outputs("reg1d", &cfg, &c.out, experiments::run_regression1d(&cfg)?)?;
        }
        Command::Recovery(c) => {
            let cfg = load(RecoveryConfig::preset(c.scale), &c)?;
            if c.print_config {
                return print_config(&cfg).map(|_| true);
            }
            cfg.validate()?;
            write_outputs("recovery", &cfg, &c.out, experiments::run_recovery(&cfg)?)?;
        }
        Command::Csvreg { common: c, data } => {
            let mut preset = CsvRegConfig::preset(c.scale);
            if let Some(d) = data {
                preset.data = d;
            }
            let cfg = load(preset, &c)?;
            if c.print_config {
                return print_config(&cfg).map(|_| true);
            }
            cfg.validate()?;
            write_outputs("csvreg", &cfg, &c.out, experiments::run_csvreg(&cfg)?)?;
        }
        Command::Sanity { common: c, inject } => {
            let mut preset = SanityConfig::preset(c.scale);
            if let Some(i) = inject {
                preset.inject = i;
            }
            let cfg = load(preset, &c)?;
            if c.print_config {
                return print_config(&cfg).map(|_| true);
            }
            cfg.validate()?;
            let (outputs, report) = experiments::run_sanity(&cfg)?;
            for line in &outputs.log {
                println!("{line}");
            }
            write_outputs("sanity", &cfg, &c.out, outputs)?;
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("sanity checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

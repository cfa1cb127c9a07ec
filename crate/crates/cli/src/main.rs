//! `embreach`: run, validate and compare safety-probability experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use embreach::dp::compare_fields;
use embreach::experiment::{
    self, artifacts, default_output_dir, validate, ExperimentConfig, ExperimentId, PolicyConfig,
};

#[derive(Parser)]
#[command(name = "embreach", version, about = "Data-driven stochastic reachability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run(RunArgs),
    /// Check a config without running it.
    Validate(ConfigArgs),
    /// Run the bound sweep of a config.
    Sweep(RunArgs),
    /// Max and mean absolute difference between two field CSVs.
    Compare { a: PathBuf, b: PathBuf },
    /// Print a built-in config: integrator, cartpole-linear, cartpole-nonlinear, pendulum, sweep.
    Preset { id: String },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config or run manifest (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the policy with network weights from this JSON file.
    #[arg(long)]
    controller: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory; defaults to the config's `output_dir` or `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(weights) = &args.controller {
        cfg.policy = PolicyConfig::Mlp {
            weights: weights.clone(),
        };
    }
    Ok(cfg)
}

fn check(cfg: &ExperimentConfig) -> Result<()> {
    let violations = validate(cfg);
    if violations.is_empty() {
        return Ok(());
    }
    for v in &violations {
        eprintln!("invalid: {v}");
    }
    bail!("{} config violation(s)", violations.len())
}

fn run(args: &RunArgs, sweep: bool) -> Result<()> {
    let mut cfg = load(&args.cfg)?;
    if sweep {
        cfg.experiment = ExperimentId::Sweep;
        if cfg.sweep.is_none() {
            cfg.sweep = ExperimentConfig::preset(ExperimentId::Sweep).sweep;
        }
    }
    check(&cfg)?;
    let dir = args.out.clone().unwrap_or_else(|| default_output_dir(&cfg));
    let (outcome, files) = experiment::run(&cfg, &dir)?;
    if let Some(e) = &outcome.dp_errors {
        println!("dp error: max {:.4}, mean {:.4}", e.max_abs, e.mean_abs);
    }
    if let Some(f) = &outcome.field {
        let mean = f.values.iter().sum::<f64>() / f.len() as f64;
        println!("{} points, mean value {:.4}", f.len(), mean);
    }
    for (phase, secs) in &outcome.timings {
        println!("{phase}: {secs:.2}s");
    }
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn main_inner() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(&args, false),
        Command::Sweep(args) => run(&args, true),
        Command::Validate(args) => {
            check(&load(&args)?)?;
            println!("ok");
            Ok(())
        }
        Command::Compare { a, b } => {
            let fa = artifacts::read_field_csv(&a)?;
            let fb = artifacts::read_field_csv(&b)?;
            let e = compare_fields(&fa, &fb)?;
            println!("max_abs,mean_abs\n{},{}", e.max_abs, e.mean_abs);
            Ok(())
        }
        Command::Preset { id } => {
            let Some(id) = ExperimentId::parse(&id) else {
                bail!("unknown preset {id:?}");
            };
            print!("{}", ExperimentConfig::preset(id).to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

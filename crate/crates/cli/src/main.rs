use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use visuomotor::harness::{selftest, Pipeline, RunConfig};

/// Uncertainty-aware visuomotor control pipeline.
#[derive(Parser, Debug)]
#[command(name = "vmc", version, about)]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; per-stage seeds derive from it unless set explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory shared by all stages of a run.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,

    /// Worker threads (0 = one per core). Never changes any output.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate expert demonstrations.
    GenDemos,
    /// Train the Bayesian policy on the demonstrations.
    Train,
    /// Roll out validation episodes and choose the recovery threshold.
    PickThreshold,
    /// Record embeddings, actions and next-tick uncertainties.
    CollectForesight,
    /// Distill the uncertainty foresight model.
    TrainForesight,
    /// Evaluate all configured controllers on shared scenes.
    Evaluate,
    /// Rebuild tables and plot data from evaluation outputs.
    Report,
    /// Run every stage in order.
    Run,
    /// Quick oracle checks of the core components.
    Selftest,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("override `{kv}` is not `key=value`"))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Command::Selftest = cli.command {
        let checks = selftest();
        for c in &checks {
            println!("{} {}{}", if c.passed { "PASS" } else { "FAIL" }, c.name, if c.detail.is_empty() { String::new() } else { format!(" ({})", c.detail) });
        }
        return Ok(checks.iter().all(|c| c.passed));
    }
    let pipeline = Pipeline::new(load_config(cli)?, &cli.out, cli.workers)?;
    match cli.command {
        Command::GenDemos => {
            let ds = pipeline.gen_demos()?;
            println!("{} demonstrations -> {}", ds.records.len(), cli.out.display());
        }
        Command::Train => {
            let (_, r) = pipeline.train()?;
            println!(
                "validation loss {:.6} -> {:.6} over {} epochs",
                r.initial_val_loss,
                r.final_val_loss,
                r.epochs.len()
            );
        }
        Command::PickThreshold => {
            let t = pipeline.pick_threshold()?;
            println!("C = {} (i* = {:?}, success rate {:.3})", t.c, t.i_star, t.r_bar);
        }
        Command::CollectForesight => pipeline.collect_foresight()?,
        Command::TrainForesight => {
            let (_, r) = pipeline.train_foresight()?;
            println!("held-out R² {:.4}, MSE {:.3e}", r.val_r2, r.val_mse);
        }
        Command::Evaluate => print!("{}", pipeline.evaluate()?.1.text),
        Command::Report => print!("{}", pipeline.report()?.text),
        Command::Run => print!("{}", pipeline.run_all()?.text),
        Command::Selftest => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

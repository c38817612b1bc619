use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dcrnet::data::{synth_generate, write_dataset};
use dcrnet_trainer::checkpoint;
use dcrnet_trainer::gradcheck::{all_checks, run_checks};
use dcrnet_trainer::train::{ablate, ablation_table, load_splits, run_eval, train};
use dcrnet_trainer::{DataSource, RunConfig};

#[derive(Parser)]
#[command(name = "dcrnet", version, about = "Train and evaluate the duplex contextual-relation segmentation model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key=value config file, applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Start from the 64×64 synthetic desk preset instead of the full-size defaults.
    #[arg(long, global = true)]
    desk: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, keeping the checkpoint with the best validation Dice.
    Train,
    /// Score a checkpoint on the test split.
    Eval,
    /// Finite-difference checks of every op, the attention blocks and the network.
    Gradcheck,
    /// Write the synthetic dataset as NetPBM files.
    Synth,
    /// Train every ablation variant over several seeds.
    Ablate,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = if cli.desk { RunConfig::desk() } else { RunConfig::default() };
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.overrides {
        cfg.apply_text(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(ck) = &cli.checkpoint {
        cfg.checkpoint = Some(ck.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let out = cfg.out_dir.as_path();
    match cli.command {
        Command::Train => {
            let splits = load_splits(&cfg)?;
            let outcome = train(&cfg, &splits, Some(out))?;
            let mut net = outcome.best;
            let eval = run_eval(&mut net, &cfg, &splits.test, Some(out))?;
            println!(
                "best epoch {} (val dice {}), test dice {:.4}; outputs in {}",
                outcome.best_epoch,
                outcome.best_val_dice.map_or("-".into(), |d| format!("{d:.4}")),
                eval.report.mean.dice,
                out.display()
            );
        }
        Command::Eval => {
            let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join("best.ckpt"));
            let mut ck = checkpoint::load(&path)?;
            if ck.net.config().input_size != cfg.net.input_size {
                bail!(
                    "checkpoint input size {:?} differs from config {:?}",
                    ck.net.config().input_size,
                    cfg.net.input_size
                );
            }
            let splits = load_splits(&cfg)?;
            let eval = run_eval(&mut ck.net, &cfg, &splits.test, Some(out))?;
            println!(
                "test dice {:.4}, {:.1} samples/s; metrics in {}",
                eval.report.mean.dice,
                eval.samples_per_sec,
                out.join("metrics.csv").display()
            );
        }
        Command::Gradcheck => {
            let results = run_checks(&all_checks());
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            println!("{} checks, {failed} failed", results.len());
            return Ok(failed == 0);
        }
        Command::Synth => {
            let DataSource::Synth(s) = &cfg.data else { bail!("synth needs a synthetic data source, not data.path") };
            let samples = synth_generate(s)?;
            write_dataset(out, &samples)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Ablate => {
            let splits = load_splits(&cfg)?;
            let rows = ablate(&cfg, &splits, Some(out))?;
            print!("{}", ablation_table(&rows));
            println!("csv: {}", Path::new(out).join("ablation.csv").display());
        }
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
            ExitCode::FAILURE
        }
    }
}

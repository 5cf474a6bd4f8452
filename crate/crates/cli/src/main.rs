use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use activecam_cli::commands;
use activecam_cli::config::{key_help, ConfigError, ControllerKind, RunConfig};

/// Simulated active camera: synthesize sequences, build datasets, train the
/// controller network and evaluate controllers in closed loop.
#[derive(Parser, Debug)]
#[command(name = "activecam", version, after_long_help = key_help())]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `run.dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Global seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic sequences to `<run>/sequences` (or --out).
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw labelled crops from sequences into `<run>/dataset`.
    GenData {
        /// Sequence directories; defaults to every sequence in the run.
        #[arg(long = "sequence")]
        sequences: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the controller network; writes weights and history.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Source sequences for translation augmentation.
        #[arg(long = "sequence")]
        sequences: Vec<PathBuf>,
        /// Weight file to write; defaults to `<run>/weights.bin`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-axis still-image errors of each controller on a dataset.
    EvalStill {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Sequences the dataset was drawn from (ground truth boxes).
        #[arg(long = "sequence")]
        sequences: Vec<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Comma-separated controllers; overrides `eval.controllers`.
        #[arg(long)]
        controllers: Option<String>,
    },
    /// Closed-loop monitoring metrics of each controller on sequences.
    EvalSeq {
        #[arg(long = "sequence")]
        sequences: Vec<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Comma-separated controllers; overrides `eval.controllers`.
        #[arg(long, alias = "controller")]
        controllers: Option<String>,
    },
    /// One closed-loop episode of one controller.
    Run {
        #[arg(long)]
        controller: ControllerKind,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Directory receiving every crop the controller saw.
        #[arg(long)]
        dump_crops: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.run_dir {
        cfg.run_dir = d.clone();
    }
    match &cli.command {
        Command::EvalStill {
            controllers: Some(c),
            ..
        }
        | Command::EvalSeq {
            controllers: Some(c),
            ..
        } => cfg.set("eval.controllers", c)?,
        _ => {}
    }
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::Synth { out } => {
            for d in commands::synth(cfg, out.as_deref())? {
                println!("{}", d.display());
            }
        }
        Command::GenData { sequences, out } => {
            let d = commands::gen_data(cfg, sequences, out.as_deref())?;
            println!("{}", d.display());
        }
        Command::Train {
            dataset,
            sequences,
            out,
        } => {
            let s = commands::train(cfg, dataset.as_deref(), sequences, out.as_deref())?;
            println!(
                "weights {} | val loss {:.6} -> {:.6} (best epoch {})",
                s.weights.display(),
                s.initial_val_loss,
                s.best_val_loss,
                s.best_epoch
            );
        }
        Command::EvalStill {
            dataset,
            sequences,
            weights,
            ..
        } => {
            let rows = commands::eval_still(cfg, dataset.as_deref(), sequences, weights.as_deref())?;
            let named: Vec<_> = rows.iter().map(|(k, e)| (k.name(), *e)).collect();
            print!("{}", activecam_core::metrics::still_table(&named));
        }
        Command::EvalSeq {
            sequences, weights, ..
        } => {
            commands::eval_seq(cfg, sequences, weights.as_deref())?;
            let report = cfg.run_dir.join(format!("{}.txt", commands::SEQ_REPORT));
            print!("{}", std::fs::read_to_string(report)?);
        }
        Command::Run {
            controller,
            sequence,
            weights,
            dump_crops,
        } => {
            let m = commands::run(cfg, *controller, sequence, weights.as_deref(), dump_crops.as_deref())?;
            print!("{}", activecam_core::metrics::trace_table(&[(controller.name(), m)]));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_config = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(activecam_core::Error::Config(_))));
            ExitCode::from(if is_config { 2 } else { 1 })
        }
    }
}

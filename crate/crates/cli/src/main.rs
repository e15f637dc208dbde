//! `aad`: feature extraction, training, scoring and evaluation of acoustic
//! anomaly detectors for wood-planer recordings.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::{EvalArgs, Outcome};
use crate::config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "aad", version, about = "Acoustic anomaly detection for industrial planers")]
struct Cli {
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and cache log-mel features for every clip in the manifest.
    Preprocess {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a detector; writes the best checkpoint and history.csv.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score the eval clips; writes scores.csv.
    Score {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to `<output_dir>/<model>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<output_dir>/<model>/scores.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ROC, AUC and pAUC for one or more scores.csv files.
    Eval {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        /// Upper false-positive rate of the partial AUC.
        #[arg(long, default_value_t = aad_core::eval::DEFAULT_MAX_FPR)]
        max_fpr: f64,
        /// Add per-anomaly-type columns to the comparison table.
        #[arg(long)]
        per_type: bool,
        /// Render input, reconstruction and error images of the N
        /// highest-scoring clips (needs --checkpoint).
        #[arg(long, requires = "checkpoint")]
        images: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Comparison table from existing report.json files or their directories.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        per_type: bool,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dump_or<F: FnOnce(&config::RunConfig) -> Result<Outcome>>(args: &ConfigArgs, f: F) -> Result<Outcome> {
    let cfg = args.resolve()?;
    if args.dump_config {
        print!("{}", cfg.to_json()?);
        return Ok(Outcome::ok());
    }
    f(&cfg)
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()?;
    }
    match cli.command {
        Command::Preprocess { config } => dump_or(&config, commands::preprocess),
        Command::Train { config } => dump_or(&config, commands::train),
        Command::Score {
            config,
            checkpoint,
            out,
        } => dump_or(&config, |cfg| {
            commands::score(cfg, checkpoint.as_deref(), out.as_deref())
        }),
        Command::Eval {
            scores,
            out,
            max_fpr,
            per_type,
            images,
            checkpoint,
            config,
        } => dump_or(&config, |cfg| {
            let args = EvalArgs {
                scores: &scores,
                out: &out,
                max_fpr,
                per_type,
                images: checkpoint.as_deref().map(|c| (c, images.unwrap_or(4))),
            };
            commands::eval(cfg, &args)
        }),
        Command::Report { reports, per_type, out } => commands::report(&reports, per_type, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(outcome) if outcome.failures.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("{} item(s) failed:", outcome.failures.len());
            for (id, err) in &outcome.failures {
                eprintln!("  {id}: {err}");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

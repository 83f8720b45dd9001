use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ferntrack_cli::{cmd_compare, cmd_synth, cmd_track, cmd_train, Mode, RunConfig};

/// Model-based facial motion tracking on synthetic parametric scenes.
#[derive(Parser)]
#[command(name = "ferntrack", version, about)]
struct Cli {
    /// Configuration file (`key = value` lines); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = machine default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Stage regressor: `gombf` or `monolithic`.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        /// Output directory (must not exist).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a cascade model on a dataset.
    Train {
        /// Dataset directory from `synth`.
        dataset: PathBuf,
        /// Model file to write; metrics land next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Track one sequence with a trained model.
    Track {
        /// Model file from `train`.
        model: PathBuf,
        /// Sequence directory (e.g. `dataset/seq_000`).
        sequence: PathBuf,
        /// Optional per-frame error table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate both regressor modes side by side.
    Compare {
        /// Dataset directory from `synth`.
        dataset: PathBuf,
        /// Directory for the comparison tables.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> ferntrack_core::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if let Some(mode) = cli.mode {
        config.mode = mode;
    }
    if config.threads > 0 {
        // Ignore the error if a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }

    match cli.command {
        Command::Synth { out } => {
            cmd_synth(&config, &out)?;
            println!(
                "wrote {} sequences x {} frames to {} (seed {})",
                config.sequences,
                config.frames,
                out.display(),
                config.seed
            );
        }
        Command::Train { dataset, out } => {
            let outcome = cmd_train(&config, &dataset, &out)?;
            let final_rmse = outcome
                .report
                .stage_rmse
                .last()
                .copied()
                .unwrap_or(outcome.report.initial_rmse);
            println!(
                "trained {} model: {} samples, training rmse {:.6} -> {:.6}",
                config.mode, outcome.report.sample_count, outcome.report.initial_rmse, final_rmse
            );
            println!(
                "model: {}  metrics: {}",
                outcome.model_path.display(),
                outcome.metrics_path.display()
            );
        }
        Command::Track {
            model,
            sequence,
            out,
        } => {
            let outcome = cmd_track(&config, &model, &sequence, out.as_deref())?;
            let mean =
                outcome.frame_errors.iter().sum::<f64>() / outcome.frame_errors.len() as f64;
            println!(
                "tracked {} frames at {:.1} fps, mean normalized error {:.6}",
                outcome.frame_errors.len(),
                outcome.fps,
                mean
            );
        }
        Command::Compare { dataset, out } => {
            let outcome = cmd_compare(&config, &dataset, &out)?;
            println!(
                "{} <= {} on {}/{} sequences; tables in {}",
                outcome.modes.0,
                outcome.modes.1,
                outcome.first_wins(),
                outcome.rows.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

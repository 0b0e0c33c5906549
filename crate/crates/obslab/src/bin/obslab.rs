//! Thin command-line front end over [`obslab::harness`]. Each subcommand
//! wraps one library pipeline; every artifact lands in a run directory named
//! by the config digest under `--out`.
//!
//! Exit codes: 0 success, 2 configuration error (including bad flags),
//! 3 runtime failure, 4 self-test assertion failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use obslab::harness::{
    evaluate, generate, mcmc_score, prepare_run, report, self_test, train_ho, train_io,
    HarnessError, RunContext,
};

#[derive(Parser)]
#[command(name = "obslab", version, about = "Signal-detection observer workbench")]
struct Cli {
    /// Task configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding the run directories.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides `rng.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the OBSLAB_THREADS environment variable,
    /// then 1.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Samples the run's measurement sets and object pools.
    Generate,
    /// Trains or solves a Hotelling template by the `train.loss` route.
    TrainHo,
    /// Trains the network observer over the architecture ladder.
    TrainIo,
    /// Scores the test set with the Markov-chain ideal observer.
    Mcmc,
    /// Computes ROC curves and summary metrics for every stored observer.
    Evaluate,
    /// Aggregates every evaluation under --out into one table.
    Report,
    /// Runs the built-in end-to-end consistency checks.
    SelfTest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match resolve_threads(cli.threads) {
        Ok(t) => t,
        Err(message) => {
            eprintln!("obslab: {message}");
            return ExitCode::from(2);
        }
    };

    let result = match cli.command {
        Command::Report => report(&cli.out).map(|table| print!("{table}")),
        Command::SelfTest => {
            return match self_test(&cli.out.join("self-test")) {
                Ok(failures) if failures.is_empty() => {
                    println!("self-test: all checks passed");
                    ExitCode::SUCCESS
                }
                Ok(failures) => {
                    for f in &failures {
                        eprintln!("self-test failure: {f}");
                    }
                    ExitCode::from(4)
                }
                Err(err) => {
                    eprintln!("obslab: {err}");
                    ExitCode::from(3)
                }
            };
        }
        ref command => with_run(&cli, threads, command),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("obslab: {err}");
            ExitCode::from(if err.is_config_error() { 2 } else { 3 })
        }
    }
}

fn with_run(cli: &Cli, threads: usize, command: &Command) -> Result<(), HarnessError> {
    let config = cli.config.as_deref().ok_or_else(|| {
        HarnessError::InvalidTask("this subcommand needs --config <file>".into())
    })?;
    let ctx: RunContext = prepare_run(config, &cli.out, cli.seed, threads)?;
    match command {
        Command::Generate => {
            generate(&ctx)?;
            println!("wrote datasets to {}", ctx.dir.display());
        }
        Command::TrainHo => {
            train_ho(&ctx)?;
            println!("wrote template to {}", ctx.dir.display());
        }
        Command::TrainIo => {
            train_io(&ctx)?;
            println!("wrote checkpoint to {}", ctx.dir.display());
        }
        Command::Mcmc => {
            mcmc_score(&ctx)?;
            println!("wrote chain scores to {}", ctx.dir.display());
        }
        Command::Evaluate => {
            let evaluation = evaluate(&ctx)?;
            for o in &evaluation.observers {
                println!("{:<16} auc {:.4}", o.name, o.auc);
            }
            println!("wrote evaluation to {}", ctx.dir.display());
        }
        Command::Report | Command::SelfTest => unreachable!("handled in main"),
    }
    Ok(())
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, String> {
    let threads = match flag {
        Some(t) => t,
        None => match std::env::var("OBSLAB_THREADS") {
            Ok(raw) => raw
                .parse()
                .map_err(|_| format!("OBSLAB_THREADS must be a positive integer, got `{raw}`"))?,
            Err(_) => 1,
        },
    };
    if threads == 0 {
        return Err("--threads must be at least 1".into());
    }
    Ok(threads)
}

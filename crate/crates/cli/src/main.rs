//! `redcore` command-line driver.
//!
//! Exit codes: 0 success, 1 property failure, 2 configuration error,
//! 3 I/O error. Logging is controlled by `REDCORE_LOG`.

mod commands;
mod config;
mod exit;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use redcore::trainer::Mode;
use redcore::verify::Suite;

use crate::commands::{EvalSplit, TrainArgs};
use crate::config::ExperimentConfig;
use crate::exit::{CliResult, Failure};

#[derive(Parser, Debug)]
#[command(name = "redcore", version, about = "Multimodal training with missing modalities and supervision regulation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for data generation, training or the verification suites.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated per-modality missing rates.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Train a model on a dataset directory.
    Train {
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// redcore, core or red.
        #[arg(long)]
        mode: Option<Mode>,
        /// Outer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many outer steps are done, keeping a checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Score a checkpoint on every modality combination.
    Eval {
        /// Checkpoint directory written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory the model was trained on.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
    },
    /// Train and evaluate over a grid of missing rates, modes and seeds.
    Sweep,
    /// Run the oracle-backed verification suites.
    Verify {
        /// Suite to run; all suites when omitted.
        #[arg(long)]
        suite: Option<Suite>,
        /// Trials per suite (suite default when omitted).
        #[arg(long)]
        trials: Option<usize>,
        /// Replace the eta update with a sign-flipped rule.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let g = cli.global;
    let mut cfg = ExperimentConfig::load(g.config.as_deref())?;
    let out = g.out.or_else(|| cfg.out.clone());
    match cli.command {
        Command::GenData { n, rates } => {
            if let Some(n) = n {
                cfg.data.n_samples = n;
            }
            if let Some(r) = rates {
                cfg.data.missing_rates = r;
            }
            if let Some(s) = g.seed {
                cfg.data.seed = s;
            }
            commands::gen_data(&cfg, out)
        }
        Command::Train {
            data,
            mode,
            steps,
            resume,
            stop_after,
        } => {
            if let Some(m) = mode {
                cfg.mode = Some(m);
            }
            if let Some(s) = steps {
                cfg.train.outer_steps = s;
            }
            if let Some(s) = g.seed {
                cfg.train.seed = s;
            }
            commands::train(
                &cfg,
                TrainArgs {
                    data,
                    out,
                    resume,
                    stop_after,
                },
            )
        }
        Command::Eval { checkpoint, data, split } => commands::eval(&cfg, &checkpoint, &data, split, out),
        Command::Sweep => {
            let out = out.ok_or_else(|| Failure::config("sweep needs --out"))?;
            sweep::sweep(&cfg, out, g.jobs)
        }
        Command::Verify {
            suite,
            trials,
            inject_sign_flip,
        } => {
            let suites = match suite {
                Some(s) => vec![s],
                None => Suite::ALL.to_vec(),
            };
            commands::verify(&suites, trials, g.seed.unwrap_or(0), inject_sign_flip)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REDCORE_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}

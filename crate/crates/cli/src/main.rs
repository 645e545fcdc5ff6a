//! `nifm` command-line front-end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 IO error.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "nifm", version, about = "Amortised posterior inference for factor copulas with GARCH(1,1) marginals")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Starting preset: `full` or `desk`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 keeps runs bit-for-bit reproducible across machines.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Shape {
    #[arg(long = "D")]
    pub dim: Option<usize>,
    #[arg(long = "k")]
    pub factors: Option<usize>,
    #[arg(long = "T")]
    pub n_obs: Option<usize>,
    /// Copula family: gaussian or t.
    #[arg(long)]
    pub family: Option<String>,
    /// Marginal innovations: gaussian or t.
    #[arg(long)]
    pub marginal_kind: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a dataset and its ground-truth parameters.
    Simulate {
        #[command(flatten)]
        shape: Shape,
    },
    /// Train the marginal network.
    TrainMarginal {
        #[command(flatten)]
        shape: Shape,
        /// Validate the configuration and print the parameter count.
        #[arg(long)]
        dry_run: bool,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the copula network.
    TrainCopula {
        #[command(flatten)]
        shape: Shape,
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Posterior inference on a CSV dataset with trained networks.
    Infer {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        marginal: Option<PathBuf>,
        #[arg(long)]
        copula: Option<PathBuf>,
        /// Write this many joint posterior draws.
        #[arg(long)]
        samples: Option<usize>,
        /// Ground-truth file from `simulate`, adds standardised errors.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Plug-in estimate: `transformed` (default) or `constrained`.
        #[arg(long, default_value = "transformed")]
        plugin: String,
        /// Credible level of the reported intervals.
        #[arg(long, default_value_t = 0.9)]
        level: f64,
    },
    /// Rolling-window log predictive density score of one model.
    Validate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        marginal: Option<PathBuf>,
        /// Copula checkpoint, or `independence` for the zero-factor model.
        #[arg(long)]
        copula: Option<String>,
        #[arg(long, default_value = "model")]
        label: String,
        /// Also write predictive draws for the last roll.
        #[arg(long)]
        draws: bool,
    },
    /// Rank several models by rolling-window log predictive density score.
    Compare {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        marginal: Option<PathBuf>,
        /// `label=copula-checkpoint` or `label=independence`; repeatable.
        #[arg(long = "candidate", required = true)]
        candidates: Vec<String>,
    },
    /// Two-stage MCMC reference run.
    Oracle {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
    },
    /// Fit prior hyperparameters to historical series.
    CalibratePriors {
        #[arg(long)]
        data: Option<PathBuf>,
        /// `ml` or `mcmc`.
        #[arg(long, default_value = "ml")]
        method: String,
        #[command(flatten)]
        shape: Shape,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.common.threads;
    match nifm::par::with_threads(threads, || commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

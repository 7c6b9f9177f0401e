//! `ldlr`: command-line access to every stage of the noisy label-distribution pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ldlr", version, about = "Label distribution learning from noisy label distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Exit with status 2 when a solver stops before converging.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add seeded Gaussian noise to a label matrix.
    Corrupt(Overrides),
    /// Learn the adaptive affinity graph and its Laplacian.
    Graph(Overrides),
    /// Split a noisy label matrix into recovered labels and sparse error.
    Recover(Overrides),
    /// Fit the multi-output regressor and save it as JSON.
    Train(Overrides),
    /// Predict label distributions with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Overrides,
    },
    /// Score predictions against true label distributions.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on ground-truth, recovered and noisy labels and compare.
    Compare(Overrides),
    /// Run the pipeline once per value of one parameter.
    Sweep {
        /// One of alpha, beta, gamma, kappa, nu.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Overrides,
    },
    /// Write a planted low-rank plus sparse synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        rank: usize,
        #[arg(long, default_value_t = 0.05)]
        error_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Linear,
    Rbf,
}

/// Settings shared by the pipeline commands. Each flag overrides the matching config field.
#[derive(Debug, Clone, Default, Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    nu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// A positive number or `median-heuristic`.
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    noise_mean: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    noise_scale: Option<f64>,
    /// Seeds both the split and the noise.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LDLR_LOG", "warn")).init();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::run(cli.command) {
        Ok(status) if status.converged || !cli.strict => ExitCode::SUCCESS,
        Ok(status) => {
            for w in &status.warnings {
                eprintln!("not converged: {w}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

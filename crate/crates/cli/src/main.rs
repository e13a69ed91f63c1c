//! `relu-dynamics`: reproducible experiments for the single-unit ReLU
//! convergence analysis. Every data file is written next to a JSON sidecar
//! holding the fully resolved parameters that produced it.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "relu-dynamics", version, about = "ReLU unit convergence: theory, Monte Carlo and activation probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spectrum report and mean-recursion trajectory per activation probability.
    Theory(TheoryArgs),
    /// Monte Carlo averaged squared weight-error trajectories.
    Simulate(SimulateArgs),
    /// Theory next to both simulated variants, with deviation summary.
    Compare(CompareArgs),
    /// Train small ReLU MLPs and record per-layer Pr[y > 0] per epoch.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Original,
    Analysis,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct CommonArgs {
    /// Master random seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Step size. Unit commands default to --step-fraction / λ_max over the sweep; probe defaults to 0.05.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct ModelArgs {
    /// Activation probabilities Pr[d > 0] to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05])]
    pub activation_probs: Vec<f64>,
    /// Input mean vector (length L >= 3); defaults to 2, 1.6, …, -2.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    /// Desired-response gain a.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub a: f64,
    /// Default step as a fraction of 1/λ_max.
    #[arg(long, default_value_t = relu_dynamics::theory::DEFAULT_STEP_FRACTION)]
    pub step_fraction: f64,
    /// Independent runs (Monte Carlo) or initial conditions (theory).
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    /// Standard deviation of each initial weight-error coordinate.
    #[arg(long, default_value_t = 0.1)]
    pub init_std: f64,
    /// Record every n-th iteration.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
}

#[derive(Debug, Args)]
struct TheoryArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Update rules to simulate.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [VariantArg::Analysis])]
    variant: Vec<VariantArg>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Deviations are measured at iterations strictly after this one.
    #[arg(long, default_value_t = 100)]
    burn_in: u64,
    /// Time-to-threshold fraction of the initial error.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of training runs (seeds seed, seed+1, …).
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    /// Layer widths: input, hidden…, output.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 32, 32, 32, 2])]
    pub layer_sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub samples_per_class: usize,
    /// Norm of each class mean.
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    /// Kill this hidden layer (0-based) with large negative biases.
    #[arg(long)]
    pub dead_layer: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Theory(args) => commands::theory(&args.common, &args.model),
        Command::Simulate(args) => commands::simulate(&args.common, &args.model, &args.variant),
        Command::Compare(args) => {
            commands::compare(&args.common, &args.model, args.burn_in as usize, args.fraction)
        }
        Command::Probe(args) => commands::probe(&args),
    };
    match result {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

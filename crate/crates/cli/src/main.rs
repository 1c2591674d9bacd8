//! `resample-lab`: reproducible resampling, variance, filtering and
//! asymptotics experiments with CSV/JSON output.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resample_lab::variance::{CounterExampleConfig, Ordering};
use resample_lab::SchemeId;
use serde::Serialize;

use output::Format;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] resample_lab::Error),
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "resample-lab", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base seed; echoed in every metadata record.
    #[arg(long, global = true, env = "RESAMPLE_LAB_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; a `<output>.meta.json` sidecar is written next to it.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct WeightArgs {
    /// Comma-separated weights.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Vec<f64>,
    /// File with one weight per line.
    #[arg(long, conflicts_with = "weights")]
    pub weights_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample a weight vector and report indices and counts.
    Resample {
        #[arg(long)]
        scheme: SchemeId,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        n: usize,
    },
    /// Conditional variances of all five schemes on one system.
    Variance(VarianceArgs),
    /// Variances on the two-value system.
    Counterexample(CounterexampleArgs),
    /// Run a particle filter on a built-in model.
    Filter(FilterArgs),
    /// Large-sample experiments.
    #[command(subcommand)]
    Asymptotics(AsymptoticsCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct VarianceArgs {
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Comma-separated values f(x_i), one per weight.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub f: Vec<f64>,
    /// File with one value f(x_i) per line.
    #[arg(long, conflicts_with = "f")]
    pub f_file: Option<PathBuf>,
    /// Offspring count; defaults to the number of weights.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    /// Use the two-value system instead, e.g. `omega=0.75,n=4`.
    #[arg(long, conflicts_with_all = ["weights", "weights_file", "f", "f_file", "n"])]
    #[serde(skip)]
    pub counterexample: Option<CounterExampleConfig>,
}

#[derive(Debug, Args, Serialize)]
pub struct CounterexampleArgs {
    #[arg(long)]
    pub omega: f64,
    #[arg(long)]
    pub n: usize,
    /// interleaved, blocked or permuted(<seed>)
    #[arg(long, default_value = "interleaved")]
    pub ordering: Ordering,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub x0: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub x1: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub f0: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub f1: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    /// Built-in model: lingauss.
    #[arg(long)]
    pub model: String,
    /// `k,y` observation file; defaults to the bundled 50-step record.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// JSON filter configuration (m, n, scheme, resample_every, horizon).
    #[arg(long, conflicts_with_all = ["scheme", "m", "n", "horizon", "resample_every"])]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<SchemeId>,
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    /// Particles after resampling; defaults to m.
    #[arg(long)]
    pub n: Option<usize>,
    /// Time indices to filter; defaults to the number of observations.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Resample every this many steps; 0 never resamples.
    #[arg(long, default_value_t = 1)]
    pub resample_every: usize,
    /// Proposal standard deviation as a multiple of the state noise; 1 is the bootstrap filter.
    #[arg(long, default_value_t = 1.0)]
    pub inflation: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PairArgs {
    /// Density pair: reference (nu uniform, g = 2x) or constant (g = 1).
    #[arg(long, default_value = "reference")]
    pub pair: String,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

#[derive(Debug, Subcommand)]
enum AsymptoticsCommand {
    /// Floor sums against their limit.
    Lemma1 {
        #[command(flatten)]
        pair: PairArgs,
        /// Test function: one, zero, x or x2.
        #[arg(long, default_value = "one")]
        f: String,
        #[arg(long, value_delimiter = ',', default_value = "1000,4000,16000")]
        m_grid: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
    },
    /// Scaled conditional variances against kappa.
    Kappa {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value = "x")]
        f: String,
        #[arg(long, default_value = "residual")]
        scheme: SchemeId,
        #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
    },
    /// Spread of filter estimates across particle counts.
    Clt {
        #[arg(long, default_value = "multinomial")]
        scheme: SchemeId,
        /// Time index of the estimate.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_value = "500,2000,8000")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        replicates: usize,
    },
    /// Mass of the set where alpha g is an integer.
    Support {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = resample_lab::asymptotics::SUPPORT_TOLERANCE)]
        tolerance: f64,
    },
}

fn dispatch(command: Command, global: &GlobalArgs) -> Result<(), CliError> {
    match command {
        Command::Resample { scheme, weights, n } => commands::resample(scheme, &weights, n, global),
        Command::Variance(args) => commands::variance(&args, global),
        Command::Counterexample(args) => commands::counterexample(&args, global),
        Command::Filter(args) => commands::filter(&args, global),
        Command::Asymptotics(sub) => match sub {
            AsymptoticsCommand::Lemma1 { pair, f, m_grid, replicates } => {
                commands::lemma1(&pair, &f, &m_grid, replicates, global)
            }
            AsymptoticsCommand::Kappa { pair, f, scheme, n_grid, replicates } => {
                commands::kappa(&pair, &f, scheme, &n_grid, replicates, global)
            }
            AsymptoticsCommand::Clt { scheme, k, n_grid, replicates } => {
                commands::clt(scheme, k, &n_grid, replicates, global)
            }
            AsymptoticsCommand::Support { pair, samples, tolerance } => {
                commands::support(&pair, samples, tolerance, global)
            }
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.global.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build()?;
            pool.install(|| dispatch(cli.command, &cli.global))
        }
        None => dispatch(cli.command, &cli.global),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

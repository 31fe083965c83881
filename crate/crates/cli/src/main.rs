mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{GridKind, KindArg, ReductionArg, SigmaGrid};

/// Train and analyze centered deep Boltzmann machines on binarized MNIST.
///
/// Settings resolve as: command-line flag, then `--config` file (`key = value`
/// lines named after the long flags), then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "cdbm", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Directory holding the four MNIST IDX files [default: data/mnist]
    #[arg(long, global = true, env = "CDBM_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Settings file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model, or the 3x3 bias/offset grid with --grid
    Train(TrainArgs),
    /// AIS estimate of the test log-likelihood of a checkpoint
    EvalGen(EvalGenArgs),
    /// Kernel-PCA residual curves of a checkpoint's layers
    EvalDisc(EvalDiscArgs),
    /// Hessian condition numbers of decoupled machines over the bias/offset grid
    Conditioning(ConditioningArgs),
    /// Draw digits from a checkpoint into a PGM grid
    Sample(SampleArgs),
    /// Render layer-1 and layer-2 filters of a checkpoint as PGM grids
    Filters(FiltersArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Initial hidden biases b0 = c0 [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub bias: Option<f64>,
    /// Hidden offsets beta = gamma, in [0, 1] [default: 0.5]
    #[arg(long)]
    pub offset: Option<f64>,
    /// Training length in epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<f64>,
    /// Learning rate [default: 0.0005]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Combine a minibatch's update terms by `sum` (one step per sample) or `mean` [default: sum]
    #[arg(long)]
    pub reduction: Option<ReductionArg>,
    /// Minibatch size [default: 25]
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Persistent free particles [default: 25]
    #[arg(long)]
    pub particles: Option<usize>,
    /// Layer-1 width [default: 400]
    #[arg(long)]
    pub hidden1: Option<usize>,
    /// Layer-2 width [default: 100]
    #[arg(long)]
    pub hidden2: Option<usize>,
    /// Train on a seeded random subset of this many training images
    #[arg(long)]
    pub subset_n: Option<usize>,
    /// Train every cell of the grid (`full`: 9 cells, `diagonal`: the 3 matched cells)
    #[arg(long, num_args = 0..=1, default_missing_value = "full", conflicts_with_all = ["bias", "offset"])]
    pub grid: Option<GridKind>,
}

#[derive(Debug, Args)]
pub struct EvalGenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Annealing steps K [default: 2500]
    #[arg(long)]
    pub ais_k: Option<usize>,
    /// Free AIS runs [default: 500]
    #[arg(long)]
    pub ais_runs: Option<usize>,
    /// Evaluate on a seeded random subset of this many test images [default: all]
    #[arg(long)]
    pub subset_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalDiscArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test images analyzed [default: 500]
    #[arg(long)]
    pub subset_n: Option<usize>,
    /// Comma-separated RBF scales sigma^2 [default: 1,10,100,1000,10000]
    #[arg(long)]
    pub sigma2: Option<SigmaGrid>,
}

#[derive(Debug, Args)]
pub struct ConditioningArgs {
    /// Units of the decoupled machine [default: 50]
    #[arg(long)]
    pub units: Option<usize>,
    /// Random directions spanning the projected Hessian [default: 20]
    #[arg(long)]
    pub directions: Option<usize>,
    /// Monte Carlo samples for the expectations [default: 100000]
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Entry distribution of the directions: gaussian or non-negative [default: gaussian]
    #[arg(long)]
    pub direction_kind: Option<KindArg>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Digits drawn [default: 100]
    #[arg(long)]
    pub count: Option<usize>,
    /// Sweeps discarded before the first digit [default: 1000]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Sweeps between consecutive digits [default: 100]
    #[arg(long)]
    pub thin: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FiltersArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Filters rendered per layer [default: 100]
    #[arg(long)]
    pub count: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = commands::Context::new(
        cli.global.config.as_deref(),
        cli.global.data_dir,
        cli.global.out,
        cli.global.seed,
        cli.global.jobs,
    )?;
    match cli.command {
        Command::Train(a) => commands::train(&ctx, a),
        Command::EvalGen(a) => commands::eval_gen(&ctx, a),
        Command::EvalDisc(a) => commands::eval_disc(&ctx, a),
        Command::Conditioning(a) => commands::conditioning(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Filters(a) => commands::filters(&ctx, a),
    }
}

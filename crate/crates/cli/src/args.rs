//! Command-line surface. Defaults mirror the library defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use causal_score::order::{BackendKind, NET_DSM_SIGMA};

#[derive(Debug, Parser)]
#[command(
    name = "causal-score",
    version,
    about = "Score-matching causal discovery and OU score-based generative modelling",
    args_override_self = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed from which every random stream is derived
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory (created if missing)
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// JSON object of flag values; explicit flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Echo the effective configuration and progress to stderr
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a random additive-noise model and a dataset from it
    Generate(GenerateArgs),
    /// Train a score network by denoising score matching
    TrainScore(TrainScoreArgs),
    /// Estimate a topological order by leaf removal
    Order(OrderArgs),
    /// Estimate an order and prune it into a causal graph
    Prune(PruneArgs),
    /// Run a discovery benchmark over a parameter grid
    Sweep(SweepArgs),
    /// Train a time-conditioned score network on an OU forward process
    SgmTrain(SgmTrainArgs),
    /// Draw samples by integrating the reverse-time SDE
    SgmSample(SgmSampleArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Edge probability of the random DAG
    #[arg(long, default_value_t = 0.3, value_parser = probability)]
    pub edge_prob: f64,

    /// Identifiability margin C_m the mechanisms are calibrated to
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub cm: f64,

    /// Lower end of the noise std range
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    pub sigma_lo: f64,

    /// Upper end of the noise std range
    #[arg(long, default_value_t = 1.5, value_parser = positive)]
    pub sigma_hi: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of variables
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub d: u64,

    /// Number of samples
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(2..))]
    pub n: u64,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct TrainScoreArgs {
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,

    /// Generating model JSON; enables ESM error tracking
    #[arg(long)]
    pub scm: Option<PathBuf>,

    /// Hidden width m
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,

    /// Number of weight matrices L
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    pub depth: u64,

    /// DSM perturbation std
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    pub sigma: f64,

    /// SGD step size
    #[arg(long, default_value_t = 1e-3, value_parser = non_negative)]
    pub eta: f64,

    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,

    /// Samples per SGD update
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,

    /// Draw one perturbation per sample instead of a fresh one per visit
    #[arg(long)]
    pub fixed_noise: bool,

    /// Evaluate the ESM error every this many epochs (0 = never)
    #[arg(long, default_value_t = 0)]
    pub eval_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Oracle,
    NoisyOracle,
    TrainedNet,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Oracle => BackendKind::Oracle,
            BackendArg::NoisyOracle => BackendKind::NoisyOracle,
            BackendArg::TrainedNet => BackendKind::TrainedNet,
        }
    }
}

#[derive(Debug, Args)]
pub struct NetArgs {
    /// Hidden width m of the per-round score network
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,

    /// Number of weight matrices L
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    pub depth: u64,

    /// DSM perturbation std, in standardized units
    #[arg(long, default_value_t = NET_DSM_SIGMA, value_parser = positive)]
    pub dsm_sigma: f64,

    /// SGD step size
    #[arg(long, default_value_t = 1e-3, value_parser = non_negative)]
    pub eta: f64,

    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,

    /// Initialise each round from the previous round's network
    #[arg(long)]
    pub warm_start: bool,

    /// Train on raw rather than z-scored columns
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct DiscoveryArgs {
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,

    /// Score source
    #[arg(long, value_enum, default_value_t = BackendArg::TrainedNet)]
    pub backend: BackendArg,

    /// Generating model JSON, required by the oracle backends
    #[arg(long)]
    pub scm: Option<PathBuf>,

    /// Noisy-oracle estimation variance [default: ln(nd)/sqrt(n)]
    #[arg(long, value_parser = positive)]
    pub noise_var: Option<f64>,

    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[command(flatten)]
    pub discovery: DiscoveryArgs,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub discovery: DiscoveryArgs,

    /// Relative variance threshold for keeping a candidate parent
    #[arg(long, default_value_t = 0.001, value_parser = open_unit)]
    pub tau_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Cm,
    N,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepBackendArg {
    Auto,
    Oracle,
    NoisyOracle,
    TrainedNet,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Parameter that varies across the grid
    #[arg(long, value_enum)]
    pub axis: AxisArg,

    /// Comma-separated, strictly increasing grid values
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub grid: Vec<f64>,

    /// Number of variables when not swept
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub d: u64,

    /// Number of samples when not swept
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    pub n: u64,

    /// Seeds per grid value
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,

    /// Score source; auto trains networks up to d = 20 and uses the noisy
    /// oracle above
    #[arg(long, value_enum, default_value_t = SweepBackendArg::Auto)]
    pub backend: SweepBackendArg,

    /// Noisy-oracle estimation variance [default: ln(nd)/sqrt(n)]
    #[arg(long, value_parser = positive)]
    pub noise_var: Option<f64>,

    /// Relative variance threshold for keeping a candidate parent
    #[arg(long, default_value_t = 0.001, value_parser = open_unit)]
    pub tau_rel: f64,

    /// Record per-run wall-clock time (otherwise written as 0)
    #[arg(long)]
    pub timing: bool,

    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Start of the diffusion time window
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    pub t0: f64,

    /// End T of the diffusion time window
    #[arg(long, default_value_t = 5.0, value_parser = positive)]
    pub t_max: f64,
}

#[derive(Debug, Args)]
pub struct SgmTrainArgs {
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,

    #[command(flatten)]
    pub schedule: ScheduleArgs,

    /// Hidden width m
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,

    /// Number of weight matrices L
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    pub depth: u64,

    /// SGD step size
    #[arg(long, default_value_t = 1e-3, value_parser = non_negative)]
    pub eta: f64,

    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,

    /// Diffusion times drawn per sample per step
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_times: u64,

    /// Clip training points to this Euclidean radius
    #[arg(long, value_parser = positive)]
    pub clip: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SgmSampleArgs {
    /// Time-conditioned network checkpoint
    #[arg(long)]
    pub net: PathBuf,

    #[command(flatten)]
    pub schedule: ScheduleArgs,

    /// Euler–Maruyama steps from T down to t0
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_steps: u64,

    /// Number of samples to draw
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_samples: u64,
}

fn parse_finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {v}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be >= 0, got {v}"))
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1], got {v}"))
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1), got {v}"))
    }
}

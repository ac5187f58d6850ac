use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Stability analysis of coded Poisson receiver systems.
#[derive(Debug, Parser)]
#[command(name = "cpr", version, about)]
pub struct Cli {
    /// System configuration file (JSON).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Bundled configuration, see `cpr presets`.
    #[arg(long, global = true)]
    pub preset: Option<String>,

    /// Directory for CSV and JSON artifacts.
    #[arg(long, global = true, env = "CPR_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for region maps and simulations.
    #[arg(long, global = true, env = "CPR_WORKERS")]
    pub workers: Option<usize>,

    /// Exit with status 3 when a result is indeterminate.
    #[arg(long, global = true)]
    pub strict: bool,

    #[command(flatten)]
    pub tols: TolArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TolArgs {
    /// Sup-norm below which the largest fixed point counts as zero.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub stable_tol: f64,

    /// Largest gap between the two fixed points still counted as equal.
    #[arg(long, global = true, default_value_t = 1e-7)]
    pub equal_tol: f64,

    /// Convergence tolerance of the recursion.
    #[arg(long, global = true)]
    pub de_tol: Option<f64>,

    /// Iteration cap of the recursion.
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,

    /// Use 500 iterations and round success probabilities above 0.99999.
    #[arg(long, global = true)]
    pub figure: bool,

    /// Also require weak stability at this many points on the segment to the
    /// load (16 when given without a value).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = STRICT_WEAK_DEFAULT)]
    pub strict_weak: Option<usize>,

    /// Forward scan points of weak-stability threshold searches.
    #[arg(long, global = true, default_value_t = 1000)]
    pub weak_scan_points: usize,
}

pub const STRICT_WEAK_DEFAULT: &str = "16";

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one offered load.
    Classify(ClassifyArgs),
    /// Threshold of a criterion along a ray.
    Threshold(ThresholdArgs),
    /// Map a criterion over a grid of loads.
    Region(RegionArgs),
    /// Asymptotic throughput at one load or over a grid.
    Throughput(ThroughputArgs),
    /// Finite-size Monte Carlo simulation.
    Simulate(SimulateArgs),
    /// Iterates of the recursion.
    DeTrace(DeTraceArgs),
    /// List bundled configurations.
    Presets,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Classify(_) => "classify",
            Command::Threshold(_) => "threshold",
            Command::Region(_) => "region",
            Command::Throughput(_) => "throughput",
            Command::Simulate(_) => "simulate",
            Command::DeTrace(_) => "de-trace",
            Command::Presets => "presets",
        }
    }
}

/// Either a full load vector or a scalar along `--direction`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct LoadArgs {
    /// Offered load: K comma-separated values, or one value with --direction.
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_negative_numbers = true
    )]
    pub g: Vec<f64>,

    /// Direction scaled by a scalar --g.
    #[arg(long, value_delimiter = ',')]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Stable,
    Weak,
    Eps,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CriterionArgs {
    #[arg(long, value_enum, default_value = "stable")]
    pub criterion: CriterionKind,

    /// ε per class (one value applies to every class); needed by `eps`.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub load: LoadArgs,

    /// Also test ε-stability with these ε values.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ThresholdArgs {
    /// Direction of the ray, K comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub direction: Vec<f64>,

    #[command(flatten)]
    pub criterion: CriterionArgs,

    /// Multipliers bracketing the threshold.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.0, 4.0])]
    pub bracket: Vec<f64>,

    /// Bisection tolerance on the multiplier.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Axis as LO:HI:STEP; give it once for every class or once per class.
    #[arg(long = "axis", value_name = "LO:HI:STEP")]
    pub axes: Vec<String>,

    /// Refuse grids with more cells than this.
    #[arg(long, default_value_t = cpr::regions::DEFAULT_MAX_CELLS)]
    pub max_cells: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RegionArgs {
    #[command(flatten)]
    pub grid: GridArgs,

    #[command(flatten)]
    pub criterion: CriterionArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(group(ArgGroup::new("where").required(true).args(["axes", "g"])))]
pub struct ThroughputArgs {
    #[command(flatten)]
    pub grid: GridArgs,

    /// Single load instead of a grid: K values, or one with --direction.
    #[arg(long, value_delimiter = ',', conflicts_with = "axes")]
    pub g: Option<Vec<f64>>,

    #[arg(long, value_delimiter = ',', requires = "g")]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub load: LoadArgs,

    /// Receivers per trial.
    #[arg(long, default_value_t = 10_000)]
    pub t: usize,

    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Draw class sizes from a Poisson law instead of rounding G T.
    #[arg(long)]
    pub poisson_users: bool,

    /// Cap on peeling rounds per trial.
    #[arg(long, default_value_t = 500)]
    pub peel_max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartArg {
    Ones,
    Zeros,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeTraceArgs {
    #[command(flatten)]
    pub load: LoadArgs,

    #[arg(long, value_enum, default_value = "ones")]
    pub start: StartArg,
}

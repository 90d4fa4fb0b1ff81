//! `roadmix` command-line front end.

mod commands;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use failure::{Failure, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "roadmix", version, about = "Two-level crash severity models")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Master seed for generation, splitting and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Re-run the command recorded in a `run.json`.
    #[arg(long, global = true)]
    from_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Draw a synthetic crash/road dataset.
    Generate(GenerateArgs),
    /// Fit one or more models to a dataset.
    Fit(FitArgs),
    /// Split, train each model and compare held-out performance.
    Compare(CompareArgs),
    /// Simulate coefficient uncertainty from a random-coefficient fit.
    Simulate(SimulateArgs),
    /// Score a saved fit on a dataset.
    Evaluate(EvaluateArgs),
    /// Intra-class correlation from a random-intercept variance.
    Icc(IccArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 99 roads, 19,956 crashes, four random slopes.
    PaperLike,
    /// 100 roads of 200 crashes, strong road intercept and pavement slope.
    HighIcc,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = Preset::PaperLike)]
    pub preset: Preset,
    /// Generator configuration as JSON; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub per_group: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DataArgs {
    /// Crash table CSV.
    #[arg(long)]
    pub crashes: PathBuf,
    /// Road table CSV.
    #[arg(long)]
    pub roads: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Glm,
    Null,
    Ri,
    Rc,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Glm => "glm",
            ModelKind::Null => "null",
            ModelKind::Ri => "ri",
            ModelKind::Rc => "rc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceArg {
    Diagonal,
    Full,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Fixed-effect terms, comma separated.
    #[arg(
        long,
        default_value = "light,pavement,geometry,weather,education,age,gender,aadt_log,access_density,heavy_vehicle_ratio"
    )]
    pub terms: String,
    /// Terms with road-specific slopes in the `rc` model.
    #[arg(long, default_value = "education,age,light,pavement")]
    pub random_slopes: String,
    #[arg(long, value_enum, default_value_t = CovarianceArg::Diagonal)]
    pub covariance: CovarianceArg,
    /// Center road-level covariates at their across-road mean.
    #[arg(long)]
    pub center_road: bool,
    /// Relative log-likelihood change ending the outer optimization.
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long = "model", value_enum, value_delimiter = ',', default_value = "rc")]
    pub models: Vec<ModelKind>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    Fixed,
    /// Predict the top-k scores positive, k = observed positives.
    Prevalence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionArg {
    Conditional,
    Marginal,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ScoringArgs {
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = ThresholdMode::Fixed)]
    pub threshold_mode: ThresholdMode,
    #[arg(long, value_enum, default_value_t = PredictionArg::Conditional)]
    pub prediction: PredictionArg,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "glm,ri,rc")]
    pub models: Vec<ModelKind>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Saved multilevel fit; when absent an `rc` model is fitted to the data.
    #[arg(long, conflicts_with_all = ["crashes", "roads"])]
    pub fit: Option<PathBuf>,
    #[arg(long, requires = "roads")]
    pub crashes: Option<PathBuf>,
    #[arg(long, requires = "crashes")]
    pub roads: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub runs: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Saved fit (`fit_<model>.json`).
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct IccArgs {
    /// Random-intercept variance.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "fit", required_unless_present = "fit")]
    pub variance: Option<f64>,
    /// Saved multilevel fit to read the variance from.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

/// Fully resolved invocation, written to `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub command: Command,
}

const DEFAULT_SEED: u64 = 1;

fn resolve(cli: Cli) -> Result<RunConfig, Failure> {
    match (cli.from_config, cli.command) {
        (Some(_), Some(_)) => Err(Failure::usage(
            "--from-config replaces the subcommand; give one or the other",
        )),
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg: RunConfig = serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("{}: not a run configuration: {e}", path.display())))?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(dir) = cli.out_dir {
                cfg.out_dir = dir;
            }
            Ok(cfg)
        }
        (None, Some(command)) => Ok(RunConfig {
            seed: cli.seed.unwrap_or(DEFAULT_SEED),
            out_dir: cli.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            command,
        }),
        (None, None) => Err(Failure::usage("no command given; see --help")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match resolve(cli).and_then(|cfg| commands::run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

//! `lamosim`: dataflow search, PD mapping, serving simulation with thermal
//! feedback, and design-space exploration from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Usage(String),
    /// The request was well formed but nothing satisfies it.
    #[error("{0}")]
    Infeasible(String),
    /// A result failed a consistency check it must always pass.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lamosim",
    version,
    about = "Model and explore 3D-DRAM chiplet systems for LLM serving"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search the best tiling and reuse policy for one GEMM on one PE
    Dataflow(DataflowArgs),
    /// Choose prefill and decode (TP, PP) and build the PE mapping
    Map(MapArgs),
    /// Replay a request trace on a mapped system
    Simulate(SimulateArgs),
    /// Explore chiplet or system designs
    Dse(DseArgs),
    /// Generate a synthetic request trace
    GenTrace(GenTraceArgs),
    /// Write the built-in configuration files
    Defaults(DefaultsArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing)
    #[arg(long, default_value = "lamosim-out")]
    pub out: PathBuf,
    /// Record wall time in the manifest (makes it differ between runs)
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct DataflowArgs {
    /// GEMM shape as MxNxK
    #[arg(long)]
    pub shape: String,
    /// Chiplet JSON whose PE is searched [default: config dir pc.json, else built-in PC]
    #[arg(long)]
    pub pe: Option<PathBuf>,
    /// Model preset name or model JSON, for the element width
    #[arg(long, default_value = "qwq-class")]
    pub model: String,
    /// DRAM temperature in Celsius
    #[arg(long, default_value_t = 65.0)]
    pub temp: f64,
    /// Also write every evaluated candidate to candidates.csv
    #[arg(long)]
    pub dump_all: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SystemModel {
    /// System JSON [default: config dir system.json, else built-in 5 PC + 4 DC]
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Model preset name or model JSON
    #[arg(long, default_value = "qwq-class")]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Trace CSV file, or a synthetic source: code, reason, longbench
    #[arg(long, default_value = "code")]
    pub trace: String,
    /// Arrival rate in requests per second for synthetic traces
    #[arg(long, default_value_t = 4.0)]
    pub rate: f64,
    /// Number of requests for synthetic traces
    #[arg(long, default_value_t = 100)]
    pub requests: usize,
    /// Seed for every random choice
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub sm: SystemModel,
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Batching {
    Continuous,
    Static,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sm: SystemModel,
    /// Plan JSON written by `map` [default: build from --mapping]
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Prefill and decode (TP, PP) as TPxPP,TPxPP
    #[arg(long, default_value = "8x1,4x2")]
    pub mapping: String,
    #[command(flatten)]
    pub trace: TraceArgs,
    /// Iterate simulation and thermal solve to a fixed point
    #[arg(long)]
    pub thermal: bool,
    /// Decode batching policy
    #[arg(long, value_enum, default_value = "continuous")]
    pub batching: Batching,
    /// Skip activity.csv (can be large)
    #[arg(long)]
    pub no_activity: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Level {
    Chiplet,
    System,
}

#[derive(Debug, Args)]
pub struct DseArgs {
    /// Explore single chiplet configurations or whole systems
    #[arg(long, value_enum)]
    pub level: Level,
    /// Chiplet level: parameter domain JSON; system level: search space JSON
    #[arg(long)]
    pub domain: Option<PathBuf>,
    /// Service limits JSON [default: config dir slo.json, else built-in]
    #[arg(long)]
    pub slo: Option<PathBuf>,
    /// System level: use the 8-candidate toy space with the tiny model
    #[arg(long)]
    pub toy: bool,
    /// Maximum number of evaluations [default: 200 chiplet, 64 system]
    #[arg(long)]
    pub budget: Option<usize>,
    /// Seed for sampling, search moves and the evaluation trace
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads [default: available cores]; results do not depend on it
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Rank by throughput per nameplate watt instead of simulated energy
    #[arg(long)]
    pub nameplate: bool,
    /// Model preset name or model JSON [default: tiny with --toy, else qwq-class]
    #[arg(long)]
    pub model: Option<String>,
    /// System level: number of synthetic requests per evaluation
    #[arg(long, default_value_t = 12)]
    pub requests: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    /// Synthetic source: code, reason, longbench
    #[arg(long, default_value = "code")]
    pub source: String,
    /// Poisson arrival rate in requests per second
    #[arg(long, default_value_t = 4.0)]
    pub rate: f64,
    /// Number of requests
    #[arg(long, default_value_t = 100)]
    pub requests: usize,
    /// Seed for arrivals and lengths
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Log-normal shape of the length distributions
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Upper clamp on input and output lengths
    #[arg(long, default_value_t = 32768)]
    pub max_len: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DefaultsArgs {
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

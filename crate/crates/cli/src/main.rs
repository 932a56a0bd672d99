//! `softchase`: analyse, chase and query probabilistic warded programs.
//!
//! Exit codes: 0 success, 1 analysis violation, 2 I/O or parse error,
//! 3 budget exceeded. Results go to stdout; diagnostics, logs and the run
//! manifest go to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "softchase",
    version,
    about = "Probabilistic reasoning over warded Datalog± programs"
)]
pub struct Cli {
    /// Worker threads for parallel phases (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Also write the run manifest as JSON to this file.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check wardedness, stratification and rule safety.
    Check(CheckArgs),
    /// Print the warded chase of the facts under all rules.
    Chase(ChaseArgs),
    /// Ground the chase network and dump nodes and edges.
    Ground(GroundArgs),
    /// Answer a query with marginal probabilities.
    Infer(InferArgs),
    /// Run the MCMC sampler and print estimated marginals.
    Sample(SampleArgs),
    /// Generate a scale-free ownership graph as edge-list CSV.
    Gen(GenArgs),
    /// Compare MCMC estimates against exact inference.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Input {
    /// Program file.
    #[arg(long, required_unless_present = "builtin")]
    pub program: Option<PathBuf>,
    /// Fact file (`.csv` for CSV, anything else Datalog); repeatable.
    #[arg(long)]
    pub facts: Vec<PathBuf>,
    /// Use a shipped example program with its demo facts.
    #[arg(long, conflicts_with = "program")]
    pub builtin: Option<String>,
    /// Evaluate aggregates over the facts generated so far instead of
    /// requiring their operands in lower strata.
    #[arg(long)]
    pub relax_aggregates: bool,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long)]
    pub program: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Csv,
}

#[derive(Args, Debug)]
pub struct ChaseArgs {
    #[command(flatten)]
    pub input: Input,
    /// Apply hard rules only.
    #[arg(long)]
    pub hard_only: bool,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GroundArgs {
    #[command(flatten)]
    pub input: Input,
    /// Maximum number of network nodes.
    #[arg(long, default_value_t = 100_000)]
    pub budget: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Mcmc,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightArg {
    PathUnion,
    Trajectory,
}

#[derive(Args, Debug, Clone)]
pub struct McmcArgs {
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    /// Mean of the Poisson number of inner steps per iteration.
    #[arg(long, default_value_t = 5.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target weight of a sampled node.
    #[arg(long, value_enum, default_value_t = WeightArg::PathUnion)]
    pub weight: WeightArg,
    /// Accept with the plain weight ratio, without the proposal correction.
    #[arg(long)]
    pub no_hastings: bool,
    /// Independent chains with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: Input,
    /// Predicate name or atom, e.g. `contract` or `contract(X,l,Y)`.
    #[arg(long)]
    pub query: String,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    pub mode: Mode,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    /// Maximum number of network nodes in exact mode.
    #[arg(long, default_value_t = 100_000)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub input: Input,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    /// Write the accepted-sample trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// base, dense or super-dense.
    #[arg(long, conflicts_with_all = ["alpha", "beta", "gamma"])]
    pub preset: Option<String>,
    #[arg(long, requires_all = ["beta", "gamma"])]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of edges given an out-of-range share.
    #[arg(long, default_value_t = 0.0)]
    pub corruption: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, conflicts_with_all = ["builtin", "graph"])]
    pub program: Option<PathBuf>,
    #[arg(long)]
    pub facts: Vec<PathBuf>,
    #[arg(long, conflicts_with = "graph")]
    pub builtin: Option<String>,
    /// Ownership edge-list CSV evaluated with the company-control program.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Iteration multipliers of the database size.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub multipliers: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 5.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = WeightArg::PathUnion)]
    pub weight: WeightArg,
    #[arg(long)]
    pub no_hastings: bool,
    /// Skip exact inference; error rates are reported as NA.
    #[arg(long)]
    pub skip_exact: bool,
    #[arg(long, default_value_t = 100_000)]
    pub budget: usize,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-fact estimates as CSV.
    #[arg(long)]
    pub facts_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOFTCHASE_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mjls_core::exec::Execution;

#[derive(Debug, Parser)]
#[command(
    name = "mjls",
    version,
    about = "Mean-square stability analysis, controller synthesis and Monte Carlo validation for periodic Markov jump linear systems"
)]
pub struct Cli {
    /// Where to write the run manifest (default: next to the command's main output)
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean-square stability of the open or closed loop
    Analyze(AnalyzeArgs),
    /// Controller synthesis by semidefinite programming
    Synthesize(SynthesizeArgs),
    /// Monte Carlo simulation with constraint audit
    Simulate(SimulateArgs),
    /// Search for or check a periodic Lyapunov certificate
    Verify(VerifyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Synthesize(_) => "synthesize",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Model JSON file
    #[arg(long)]
    pub model: PathBuf,
    /// Gains JSON file; analyzes the closed loop when given
    #[arg(long)]
    pub gains: Option<PathBuf>,
    /// Also write the report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Problem {
    /// Guaranteed-cost design over a hull of initial states
    P1,
    /// Largest certified region of attraction
    P2,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(value_enum)]
    pub problem: Problem,
    /// Model JSON file
    #[arg(long)]
    pub model: PathBuf,
    /// Synthesis spec JSON file matching the problem kind
    #[arg(long)]
    pub spec: PathBuf,
    /// Strictness margin added to every matrix inequality
    #[arg(long, default_value_t = mjls_core::synthesis::DEFAULT_EPSILON)]
    pub eps: f64,
    #[arg(long, default_value = "gains.json")]
    pub out_gains: PathBuf,
    #[arg(long, default_value = "synthesis_report.json")]
    pub out_report: PathBuf,
    /// Also write the Lyapunov certificate P = S^{-1}
    #[arg(long)]
    pub out_certificate: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecutionArg {
    Sequential,
    Parallel,
}

impl From<ExecutionArg> for Execution {
    fn from(e: ExecutionArg) -> Self {
        match e {
            ExecutionArg::Sequential => Execution::Sequential,
            ExecutionArg::Parallel => Execution::Parallel,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model JSON file
    #[arg(long)]
    pub model: PathBuf,
    /// Gains JSON file; simulates the open loop when omitted
    #[arg(long)]
    pub gains: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, env = "MJLS_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Synthesis spec used for the constraint audit and initial states
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Certificate used for the Lyapunov audit (and initial states when the
    /// spec has no hull)
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Fixed initial state, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Initial mode distribution, comma separated (default: from the spec, else uniform)
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = ExecutionArg::Parallel)]
    pub execution: ExecutionArg,
    /// Output directory for CSV files and the summary
    #[arg(long, default_value = "simulation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Model JSON file
    #[arg(long)]
    pub model: PathBuf,
    /// Gains JSON file; verifies the open loop when omitted
    #[arg(long)]
    pub gains: Option<PathBuf>,
    /// Certificate to check instead of solving for one
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Strictness margin of the feasibility problem
    #[arg(long, default_value_t = mjls_core::stability::DEFAULT_EPSILON)]
    pub eps: f64,
    /// Also write the report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the certificate found by the solver
    #[arg(long)]
    pub out_certificate: Option<PathBuf>,
}

//! Command-line front end: model files, subcommands and report export.

mod commands;
pub mod model_file;
pub mod table;

use std::io::Write;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use gscreen_core::certify::CertifyError;
use gscreen_core::expr::ExprError;
use gscreen_core::geometry::GeometryError;
use gscreen_core::model::ModelError;
use gscreen_core::oracle::OracleError;
use gscreen_core::solver::SolverError;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    HypothesisFailure,
    InputError,
    Inconclusive,
    NoConvergence,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::HypothesisFailure => 1,
            Outcome::InputError => 2,
            Outcome::Inconclusive => 3,
            Outcome::NoConvergence => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl CliError {
    pub fn outcome(&self) -> Outcome {
        match self {
            CliError::Solver(SolverError::Infeasible)
            | CliError::Geometry(GeometryError::NoConvergence { .. })
            | CliError::Model(ModelError::NoConvergence { .. }) => Outcome::NoConvergence,
            CliError::Certify(CertifyError::NoConvergence(_)) => Outcome::NoConvergence,
            _ => Outcome::InputError,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}

/// Screening problems with non-quasilinear preferences: hypothesis checks,
/// concavity certificates, the discretized principal's program and a
/// brute-force menu oracle.
///
/// MODEL is a path to a JSON model file or `builtin:NAME` (see `gscreen
/// builtin --list`).
#[derive(Debug, Parser)]
#[command(name = "gscreen", version)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "GSCREEN_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the standing hypotheses by deterministic sampling; exit 1 if
    /// any fails.
    Check(CheckArgs),
    /// Certify concavity of the principal's objective; exit 3 when
    /// inconclusive.
    Certify(CertifyArgs),
    /// Solve the discretized principal's program.
    ///
    /// Solution CSV columns: x1..xm, y1..yn, z, u, ic_slack, ir_slack.
    Solve(SolveArgs),
    /// Solve one G-segment.
    ///
    /// CSV columns: t, y1..yn, z, residual.
    Segment(SegmentArgs),
    /// Best responses of agents to a menu.
    ///
    /// Menu CSV columns: y1..yn, price. Output CSV columns: x1..xm, y1..yn,
    /// z, u.
    Respond(RespondArgs),
    /// Enumerate all menus on product and price grids.
    ///
    /// CSV columns as for `solve`.
    Oracle(OracleArgs),
    /// Print a builtin model file.
    Builtin(BuiltinArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model file or `builtin:NAME`.
    pub model: String,
    /// Seed of all sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = gscreen_core::certify::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = gscreen_core::certify::DEFAULT_TOL)]
    pub tol: f64,
    /// Comma-separated subset of lemma49, examples, fourth_order, local_b.
    #[arg(long, default_value = "lemma49,examples,fourth_order,local_b", value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Configurations of the fourth-order test.
    #[arg(long, default_value_t = 512)]
    pub fourth_samples: usize,
    /// Product samples of the local test.
    #[arg(long, default_value_t = 256)]
    pub local_samples: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Agents per axis of the tensor grid on cl(X), e.g. `11` or `5,5`.
    #[arg(long, default_value = "11", value_delimiter = ',')]
    pub agents: Vec<usize>,
    /// Random starts in addition to the pooling start.
    #[arg(long, default_value_t = 3)]
    pub multistart: usize,
    #[arg(long, default_value_t = 20)]
    pub outer_iterations: usize,
    #[arg(long, default_value_t = 5000)]
    pub inner_iterations: usize,
    /// Samples of the hypothesis pre-check (0 skips it).
    #[arg(long, default_value_t = 256)]
    pub check_samples: usize,
    /// Solution CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<String>,
    /// Also write the JSON summary here.
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Model file or `builtin:NAME`.
    pub model: String,
    /// Agent, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Vec<f64>,
    /// Start `y1,..,yn,z`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub from: Vec<f64>,
    /// End `y1,..,yn,z`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub to: Vec<f64>,
    #[arg(long, default_value_t = gscreen_core::geometry::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct RespondArgs {
    /// Model file or `builtin:NAME`.
    pub model: String,
    /// Menu CSV with header `y1,..,yn,price`.
    #[arg(long)]
    pub menu: String,
    /// Agents as `x1,..,xm` separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    pub agents: Option<String>,
    /// Tensor grid counts per axis instead of explicit agents.
    #[arg(long, value_delimiter = ',', conflicts_with = "agents")]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Model file or `builtin:NAME`.
    pub model: String,
    /// Agents per axis of the tensor grid on cl(X).
    #[arg(long, default_value = "6", value_delimiter = ',')]
    pub agents: Vec<usize>,
    /// Products per axis of the uniform grid on cl(Y); the outside product
    /// is added when not on the grid.
    #[arg(long, default_value = "6", value_delimiter = ',')]
    pub products: Vec<usize>,
    /// Prices on the uniform grid on cl(Z).
    #[arg(long, default_value_t = 8)]
    pub prices: usize,
    /// Allocation CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<String>,
    /// Also write the JSON summary here.
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuiltinArgs {
    /// One of quasilinear, price_sensitive, inhomogeneous, zero_sum_profit.
    pub name: Option<String>,
    /// List builtin names.
    #[arg(long)]
    pub list: bool,
}

/// Run a parsed command, writing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Outcome, CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        // the global pool can be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Check(a) => commands::check(a, out),
        Command::Certify(a) => commands::certify(a, out),
        Command::Solve(a) => commands::solve(a, out),
        Command::Segment(a) => commands::segment(a, out),
        Command::Respond(a) => commands::respond(a, out),
        Command::Oracle(a) => commands::oracle(a, out),
        Command::Builtin(a) => commands::builtin(a, out),
    }
}

/// Parse arguments, run, print errors to stderr and return the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => Outcome::InputError.code(),
            };
        }
    };
    match run(&cli, out) {
        Ok(o) => o.code(),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.outcome().code()
        }
    }
}

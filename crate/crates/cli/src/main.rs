//! `bayesqp`: seeded runs, quantile reports, parameter sweeps and optimum
//! estimates for the benchmark problems.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use bayesqp::driver::{HyperSetting, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error carrying its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation, exit status 2.
    Usage(String),
    /// A run or file operation failed, exit status 1.
    Run(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) | Failure::Run(msg) => f.write_str(msg),
        }
    }
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Run(_) => ExitCode::from(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    Bayesqp,
    Random,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Bayesqp => "bayesqp",
            Algorithm::Random => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HyperMode {
    Frozen,
    Learn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepGrid {
    /// Rows `δ_f`, columns `δ_c`.
    Delta,
    /// Rows sub-samples per iteration `K`, columns line-search budget `M`.
    SubsamplesLs,
}

#[derive(Parser, Debug)]
#[command(name = "bayesqp", version, about = "Constrained black-box optimization with GP-based SQP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run seeded experiments and write one trace per run plus a manifest.
    Run(RunArgs),
    /// Aggregate trace CSVs into a quantile table.
    Report(ReportArgs),
    /// Median final value over a two-parameter grid.
    Sweep(SweepArgs),
    /// Brute-force optimum estimate for a problem.
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    /// Registered problem name.
    #[arg(long)]
    pub problem: String,
    /// Dimension for problems with a configurable dimension.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// `key = value` file with run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long = "delta-f")]
    pub delta_f: Option<f64>,
    #[arg(long = "delta-c")]
    pub delta_c: Option<f64>,
    /// Ball sub-samples per iteration (default d + 1).
    #[arg(long)]
    pub subsamples: Option<usize>,
    #[arg(long = "ls-budget")]
    pub ls_budget: Option<usize>,
    #[arg(long = "ball-radius")]
    pub ball_radius: Option<f64>,
    #[arg(long, value_enum)]
    pub hyper: Option<HyperMode>,
    /// Lengthscale used with `--hyper frozen`.
    #[arg(long)]
    pub lengthscale: Option<f64>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::new(100);
        if let Some(path) = &self.config {
            config::apply_file(&mut cfg, path)?;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(v) = self.delta_f {
            cfg.delta_f = v;
        }
        if let Some(v) = self.delta_c {
            cfg.delta_c = v;
        }
        if let Some(v) = self.subsamples {
            cfg.subsamples = Some(v);
        }
        if let Some(v) = self.ls_budget {
            cfg.ls_budget = v;
        }
        if let Some(v) = self.ball_radius {
            cfg.ball_radius = v;
        }
        match self.hyper {
            Some(HyperMode::Learn) => cfg.hyper = HyperSetting::Learn,
            Some(HyperMode::Frozen) => config::apply(&mut cfg, "hyper", "frozen")?,
            None => {}
        }
        if let Some(v) = self.lengthscale {
            config::apply(&mut cfg, "lengthscale", &v.to_string())?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
pub struct ExecArgs {
    /// Seed count `n` (seeds 0..n), range `a..b`, or list `a,b,c`.
    #[arg(long, default_value = "1")]
    pub seeds: String,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bayesqp")]
    pub algo: Vec<Algorithm>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Trace CSV files, directories or glob patterns.
    #[arg(required = true)]
    pub traces: Vec<String>,
    /// Lower and upper quantile.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.05, 0.95])]
    pub quantiles: Vec<f64>,
    /// Directory for `report.csv` and `report.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "delta")]
    pub grid: SweepGrid,
    #[arg(long, value_delimiter = ',', required = true)]
    pub rows: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub cols: Vec<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Instance seed for seeded problems.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid points per axis (d ≤ 3).
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(&args),
        Command::Report(args) => commands::report(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Oracle(args) => commands::oracle(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}

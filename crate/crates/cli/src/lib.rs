//! Command-line front end: reads a run configuration, drives the experiment and writes
//! CSV and JSON artifacts.
//!
//! Exit codes: 0 success, 1 maximum-principle verdict FAIL, 2 configuration or validation
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mfsmp::backward::BackwardError;
use mfsmp::costeval::CostError;
use mfsmp::forward::ForwardError;
use mfsmp::lq::LqError;
use mfsmp::randkit::RandError;
use mfsmp::smp::SmpError;
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;
pub mod scenario;

use config::{FileConfig, Kind, Overrides, RunConfig};
use output::Sink;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Io(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<RandError> for Failure {
    fn from(e: RandError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ForwardError> for Failure {
    fn from(e: ForwardError) -> Self {
        match e {
            ForwardError::InvalidConfig(_) | ForwardError::Rand(_) | ForwardError::Validation(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<LqError> for Failure {
    fn from(e: LqError) -> Self {
        match e {
            LqError::FixedPointDiverged { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<BackwardError> for Failure {
    fn from(e: BackwardError) -> Self {
        match e {
            BackwardError::Forward(f) => f.into(),
            BackwardError::DriverNotLinear(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<CostError> for Failure {
    fn from(e: CostError) -> Self {
        match e {
            CostError::Forward(f) => f.into(),
            CostError::Backward(b) => b.into(),
            CostError::Rand(r) => r.into(),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<SmpError> for Failure {
    fn from(e: SmpError) -> Self {
        match e {
            SmpError::Forward(f) => f.into(),
            SmpError::Backward(b) => b.into(),
            SmpError::Cost(c) => c.into(),
            SmpError::InconsistentSolution { .. } => Failure::Numerical(e.to_string()),
        }
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    SmpFail,
}

#[derive(Debug, Parser)]
#[command(name = "mfsmp", version, about = "Mean-field jump systems: simulation, LQ closed forms and maximum-principle checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the controlled state; writes trajectory.csv and summary.json.
    Simulate,
    /// Solve the LQ closed forms; writes curves.csv and solution.json.
    SolveLq,
    /// Check the maximum principle along simulated paths; writes smp_report.json.
    VerifySmp,
    /// Compare progressive and predictable optimal laws; writes comparison.csv and comparison.json.
    Compare,
    /// Variation orders, gradient check and grid refinement; writes convergence.csv and convergence.json.
    Convergence,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::SolveLq => "solve-lq",
            Command::VerifySmp => "verify-smp",
            Command::Compare => "compare",
            Command::Convergence => "convergence",
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (required by every stochastic command).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true, value_name = "M")]
    paths: Option<usize>,
    /// Euler step.
    #[arg(long, global = true, value_name = "X")]
    dt: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    /// Built-in system, overriding `[spec] kind`.
    #[arg(long, global = true, value_enum)]
    kind: Option<KindArg>,
    /// Omit the timestamp from JSON outputs.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Example1,
    Example2,
    Lq,
    Nonlinear,
}

impl From<KindArg> for Kind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Example1 => Kind::Example1,
            KindArg::Example2 => Kind::Example2,
            KindArg::Lq => Kind::Lq,
            KindArg::Nonlinear => Kind::Nonlinear,
        }
    }
}

fn execute(cfg: &RunConfig, command: &Command, timestamp: bool) -> Result<(Status, Vec<PathBuf>), Failure> {
    let mut sink = Sink::new(&cfg.out, timestamp)?;
    let status = match command {
        Command::Simulate => commands::cmd_simulate(cfg, &mut sink)?,
        Command::SolveLq => commands::cmd_solve_lq(cfg, &mut sink)?,
        Command::VerifySmp => commands::cmd_verify_smp(cfg, &mut sink)?,
        Command::Compare => commands::cmd_compare(cfg, &mut sink)?,
        Command::Convergence => commands::cmd_convergence(cfg, &mut sink)?,
    };
    Ok((status, sink.written))
}

fn prepare(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut file = match &cli.common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(k) = cli.common.kind {
        file.spec.kind = k.into();
    }
    let o = Overrides { seed: cli.common.seed, paths: cli.common.paths, dt: cli.common.dt, out: cli.common.out.clone() };
    RunConfig::resolve(cli.command.name(), file, o)
}

fn dispatch(cli: &Cli) -> Result<Status, Failure> {
    let cfg = prepare(cli)?;
    let timestamp = !cli.common.no_timestamp;
    let (status, written) = match cli.common.threads {
        Some(0) => return Err(Failure::Config("--threads must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().map_err(|e| Failure::Config(e.to_string()))?;
            pool.install(|| execute(&cfg, &cli.command, timestamp))?
        }
        None => execute(&cfg, &cli.command, timestamp)?,
    };
    for p in &written {
        println!("wrote {}", p.display());
    }
    if status == Status::SmpFail {
        println!("maximum principle check: FAIL");
    }
    Ok(status)
}

/// Runs the command line `args` (program name first) and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(Status::Pass) => 0,
        Ok(Status::SmpFail) => 1,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

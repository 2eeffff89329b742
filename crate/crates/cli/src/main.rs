//! `queuenet` loads a road topology, optimizes its path splits with
//! bottleneck hunting, and writes plot-ready CSV reports.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out-dir`.
//! Exit codes: 0 success, 1 failed validation checks, 2 parse or
//! configuration error, 3 unstable queue, 4 infeasible input, 5 anything else.

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is ignored.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use queuenet::optimizer::WPrimeRule;
use queuenet::policy::Engine;
use queuenet::Error;

#[derive(Parser, Debug)]
#[command(name = "queuenet", version, about = "Travel-time aware route splitting on queue networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run bottleneck hunting and write the optimized policy.
    Optimize(OptimizeArgs),
    /// Objective as a function of one path's split.
    Sweep(SweepArgs),
    /// Per-path travel-time CDFs under a policy.
    Cdf(CdfArgs),
    /// Discrete-event simulation of a policy checked against the analytics.
    Simulate(SimulateArgs),
    /// Consistency checks of the whole pipeline on a topology.
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EngineArg {
    Mm1,
    Md1,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Engine {
        match e {
            EngineArg::Mm1 => Engine::Mm1,
            EngineArg::Md1 => Engine::Md1,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SweepEngineArg {
    Mm1,
    Md1,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum WPrimeArg {
    Literal,
    Maxmin,
}

impl From<WPrimeArg> for WPrimeRule {
    fn from(r: WPrimeArg) -> WPrimeRule {
        match r {
            WPrimeArg::Literal => WPrimeRule::LiteralPseudocode,
            WPrimeArg::Maxmin => WPrimeRule::MaxMinSlack,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Lattice step of the numerical CDFs [default: smallest omega / 2000].
    #[arg(long)]
    step: Option<f64>,
    /// Truncation horizon of the numerical CDFs [default: 10 x largest omega].
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct BhArgs {
    #[arg(long, default_value_t = 0.25)]
    phi0: f64,
    #[arg(long, default_value_t = 1e-3)]
    phi_min: f64,
    #[arg(long, value_enum, default_value_t = WPrimeArg::Literal)]
    wprime_rule: WPrimeArg,
    #[arg(long, default_value_t = 10_000)]
    max_iterations: usize,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    topology: PathBuf,
    /// Service model for every queue [default: as in the topology file].
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Policy file whose splits serve as the starting point.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    bh: BhArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    topology: PathBuf,
    /// Flow to sweep; it must have exactly two paths.
    #[arg(long)]
    flow: String,
    /// Signature of the swept path, e.g. q2-q4-q5 [default: the flow's second path].
    #[arg(long)]
    path: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    from: f64,
    #[arg(long, default_value_t = 0.95)]
    to: f64,
    #[arg(long, default_value_t = 19)]
    steps: usize,
    #[arg(long, value_enum)]
    engine: Option<SweepEngineArg>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CdfArgs {
    topology: PathBuf,
    policy: PathBuf,
    /// Overrides the engine stored in the policy.
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Number of time points in the CDF table.
    #[arg(long, default_value_t = 1001)]
    points: usize,
    /// Last time point [default: 2 x largest omega].
    #[arg(long)]
    t_max: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    n_vehicles: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    topology: PathBuf,
    policy: PathBuf,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    topology: PathBuf,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Grid spacing of the brute-force comparison.
    #[arg(long, default_value_t = 0.01)]
    grid_resolution: f64,
    #[command(flatten)]
    bh: BhArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.downcast_ref::<Error>() else {
        return 5;
    };
    if e.is_parse() {
        return 2;
    }
    if e.is_instability() {
        return 3;
    }
    match e {
        Error::Config(_) | Error::Horizon { .. } | Error::Cycle(_) => 2,
        Error::Infeasible(_) | Error::Unreachable(_) | Error::Dimensionality(_) => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(a) => commands::optimize(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Cdf(a) => commands::cdf(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

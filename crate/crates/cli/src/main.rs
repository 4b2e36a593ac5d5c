//! `dispatch`: generate instances, solve them exactly, train TD policies and
//! compare dispatch policies.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dispatch_core::Error;

#[derive(Parser, Debug)]
#[command(name = "dispatch", version, about = "Ambulance dispatch MDP solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random instance on the unit square.
    Gen(GenArgs),
    /// Solve an instance exactly by policy iteration.
    #[command(after_help = SOLVE_FILES)]
    Solve(SolveArgs),
    /// Learn a policy by TD-based approximate policy iteration.
    #[command(after_help = TRAIN_FILES)]
    Train(TrainArgs),
    /// Evaluate one policy.
    #[command(after_help = REPORT_FILES)]
    Eval(EvalArgs),
    /// Evaluate several policies side by side.
    #[command(after_help = REPORT_FILES)]
    Compare(CompareArgs),
}

const SOLVE_FILES: &str = "\
Outputs (in --out-dir):
  policy.json  {\"actions\": {\"<node>,<mask>\": unit}}, 1-based nodes and units
  trace.csv    iter,mu,policy_changes
  values.csv   call,mask,value (exact; call 0 is the no-call state)
               mask,value      (pd)";

const TRAIN_FILES: &str = "\
Outputs (in --out-dir):
  policy.json  {\"actions\": {\"<node>,<mask>\": unit}}, 1-based nodes and units
  trace.csv    iter,sample_mean_response,mu_estimate,policy_changes
  values.csv   mask,r_value (learned values of the last iteration)";

const REPORT_FILES: &str = "\
Report CSV columns:
  policy_name,method,mean_response,loss_fraction,ci_halfwidth
ci_halfwidth is empty for exact rows. A policy argument is either a policy
file or the built-in name `myopic`; rows are named by the argument as given.";

#[derive(Args, Debug)]
struct OutDir {
    /// Output directory.
    #[arg(short = 'o', long, env = "DISPATCH_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of demand nodes J.
    #[arg(long)]
    nodes: usize,
    /// Number of units N.
    #[arg(long)]
    units: usize,
    /// Minutes of travel per unit distance.
    #[arg(long, default_value_t = 60.0)]
    minutes_per_distance: f64,
    /// Turnout minutes added to every response.
    #[arg(long, default_value_t = 1.0)]
    turnout: f64,
    /// Target lambda / sum(mu); pass 0 to keep raw arrival rates.
    #[arg(long, default_value_t = 0.5)]
    utilization: f64,
    /// Output file; defaults to instance.json in $DISPATCH_OUT_DIR.
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolveMethod {
    Exact,
    Pd,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(short = 'i', long)]
    instance: PathBuf,
    #[arg(long, value_enum)]
    method: SolveMethod,
    /// Starting policy: `myopic` or a policy file.
    #[arg(long, default_value = "myopic")]
    init: String,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Raise the state budget of the exact solver.
    #[arg(long)]
    max_states: Option<usize>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(short = 'i', long)]
    instance: PathBuf,
    /// Outer iterations.
    #[arg(short = 'K', long = "iterations", default_value_t = 25)]
    iterations: usize,
    /// Transitions per rollout.
    #[arg(short = 'T', long = "steps", default_value_t = 200_000)]
    steps: u64,
    /// Step-size parameter, gamma_t = a / (a + t).
    #[arg(short = 'a', long = "step-param", default_value_t = 1000.0)]
    a: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep learned values between outer iterations.
    #[arg(long)]
    warm_start: bool,
    /// Starting policy: `myopic`, `random` or a policy file.
    #[arg(long, default_value = "myopic")]
    init: String,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalMethodArg {
    Auto,
    Exact,
    Sim,
}

#[derive(Args, Debug)]
struct EvalSettings {
    #[arg(long, value_enum, default_value = "auto")]
    method: EvalMethodArg,
    /// Largest fleet evaluated exactly under `--method auto`.
    #[arg(long, default_value_t = 12)]
    exact_max_units: usize,
    /// Served calls per simulated replication.
    #[arg(long, default_value_t = 1_000_000)]
    calls: u64,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(short = 'i', long)]
    instance: PathBuf,
    #[arg(short = 'p', long, default_value = "myopic")]
    policy: String,
    #[command(flatten)]
    settings: EvalSettings,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(short = 'i', long)]
    instance: PathBuf,
    #[arg(short = 'p', long = "policy", required = true, num_args = 1)]
    policies: Vec<String>,
    #[command(flatten)]
    settings: EvalSettings,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } | Error::Validation(_) | Error::InfeasibleAction(_) => 2,
        Error::Guard(_) => 3,
        Error::Numerical(_) => 4,
        Error::Io(_) | Error::Csv(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Solve(args) => commands::solve(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Compare(args) => commands::compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::Guard(_)) {
                eprintln!("hint: `dispatch train` handles fleets of any size");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

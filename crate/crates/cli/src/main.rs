use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpomdp_core::CoreError;

mod commands;
mod config;
mod schema;

use config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "cpomdp", version, about = "Budget-constrained screening policies on belief grids")]
pub struct Cli {
    /// Model JSON file, or builtin:default | builtin:high-risk | builtin:overshoot.
    #[arg(long, global = true, env = "CPOMDP_MODEL")]
    pub model: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = "CPOMDP_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "CPOMDP_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true, env = "CPOMDP_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, env = "CPOMDP_LOG_LEVEL", default_value = "info")]
    pub log_level: String,
    /// TOML experiment file; flags override its settings.
    #[arg(long, global = true, env = "CPOMDP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory for cached projection tables.
    #[arg(long, global = true, env = "CPOMDP_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    MaxQaly,
    MinLbcmr,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrontMethod {
    Weighted,
    Epsilon,
    /// Walk the risk cap down point by point (exact for deterministic mode).
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    GridChain,
    Belief,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum ProjectionArg {
    #[default]
    L1,
    SquaredL2,
}

/// Grid, start and program settings shared by the solving commands.
#[derive(Args, Debug, Clone, Default)]
pub struct InstanceArgs {
    /// Fixed grid resolution.
    #[arg(long)]
    pub resolution: Option<u64>,
    /// Variable grid resolutions, e.g. 100,25,5.
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<u64>>,
    /// Variable grid thresholds on the healthy probability, e.g. 0.96,0.8,0.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Budget override.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Drop the budget row.
    #[arg(long, conflicts_with = "budget")]
    pub no_budget: bool,
    /// Starting belief (defaults to the model's, else the healthy vertex).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub pi0: Option<Vec<f64>>,
    /// One action per epoch and grid point (mixed-integer program).
    #[arg(long)]
    pub deterministic: bool,
    /// Keep unreachable grid points in the program.
    #[arg(long)]
    pub no_eliminate: bool,
    #[arg(long, value_enum, default_value = "l1")]
    pub projection: ProjectionArg,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve one occupancy program and write the solution and policy.
    Solve {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        /// Weight pair for the weighted objective.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Also write the program in LP text format.
        #[arg(long)]
        export_lp: bool,
    },
    /// Trace the QALY/mortality frontier.
    Pareto {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long, value_enum, default_value = "epsilon")]
        method: FrontMethod,
        /// Number of weights or risk caps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Lower/upper bounds on the unconstrained value for a list of grids.
    Bounds {
        /// Semicolon-separated variable resolutions, e.g. "100,25,5;250,50,5".
        #[arg(long)]
        grids: Option<String>,
        /// Comma-separated fixed resolutions, e.g. "1,2,4".
        #[arg(long, value_delimiter = ',')]
        fixed: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Add the exact value column (small instances only).
        #[arg(long)]
        exact: bool,
    },
    /// Monte-Carlo evaluation of one or more policies.
    Simulate {
        #[command(flatten)]
        inst: InstanceArgs,
        /// solution.json, none, or annual:ACTION / biennial:ACTION. Repeat to compare.
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        /// Index of the comparison baseline among the policies.
        #[arg(long, default_value_t = 0)]
        baseline: usize,
        #[arg(long, value_enum, default_value = "belief")]
        mode: ModeArg,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
    },
    /// Belief and actions for a patient whose every result is negative.
    Trace {
        #[command(flatten)]
        inst: InstanceArgs,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        omit_wait_rows: bool,
    },
    /// Solve and simulate every cell of a disutility/cost sweep.
    Sensitivity {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Screening disutility sets in days, e.g. "0,0.5,2.5,1;0,0.5,0.5,0.5".
        #[arg(long)]
        screening: Option<String>,
        /// Positive-test disutilities in days, e.g. "0,7,14".
        #[arg(long)]
        pt: Option<String>,
        /// Cost sets, e.g. "0,134,1752,243".
        #[arg(long)]
        costs: Option<String>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
    },
    /// Write a grid as CSV.
    Grid {
        #[command(flatten)]
        inst: InstanceArgs,
    },
    /// Check a model document.
    Validate,
    /// Check emitted files against their schemas.
    SchemaCheck {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print a built-in model as JSON.
    Fixture {
        #[arg(long, default_value = "default")]
        name: String,
    },
}

/// 2 for bad inputs, 3 for solver failures, 4 for resource bounds.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::ResourceBound(_) => 4,
                CoreError::Solver { .. }
                | CoreError::Lp(_)
                | CoreError::DivisionByZero
                | CoreError::ZeroLikelihood { .. }
                | CoreError::PolicyDomain { .. }
                | CoreError::Cache(_) => 3,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Abandoned warm starts make the HiGHS wrapper warn; those are expected.
    env_logger::Builder::new()
        .filter_module("highs", log::LevelFilter::Error)
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&config::config_err("x")), 2);
        assert_eq!(exit_code(&CoreError::ResourceBound("x".into()).into()), 4);
        let solver = CoreError::Solver { status: cpomdp_lp::SolveStatus::Infeasible, context: "x".into() };
        assert_eq!(exit_code(&anyhow::Error::from(solver).context("solve")), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}

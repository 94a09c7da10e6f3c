mod bench;
mod commands;
mod input;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::input::{FunctionArg, SchemaError};
use crate::report::Parameters;

#[derive(Parser, Debug)]
#[command(name = "robust-contracts", version, about = "Robust contract design solvers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Audit/worst-case grid points per axis (d ≤ 2).
    #[arg(long, global = true, default_value_t = 21)]
    pub grid: usize,
    /// Largest certificate residual accepted before reporting a numeric failure.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol: f64,
    /// Seed for randomized multistarts and suites.
    #[arg(long, global = true, default_value_t = 42, env = "ROBUST_CONTRACTS_SEED")]
    pub seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file (directory for `bench`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn parameters(&self) -> Parameters {
        Parameters { grid: self.grid, tol: self.tol, seed: self.seed }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Improve a tabular contract to a dominating linear contract.
    Improve {
        #[arg(long)]
        contract: PathBuf,
        #[arg(long)]
        cost: FunctionArg,
        #[arg(long)]
        utility: FunctionArg,
        /// Box domain upper corner, e.g. `0.3,1`; the outcome hull when omitted.
        #[arg(long = "box")]
        upper: Option<String>,
    },
    /// Evaluate the concave and convex envelopes at query points (CSV).
    Envelope {
        #[arg(long)]
        contract: PathBuf,
        /// JSON file with a list of points.
        #[arg(long)]
        points: Option<PathBuf>,
        /// A single point, e.g. `0.5,0.5`; may be repeated.
        #[arg(long = "point")]
        point: Vec<String>,
    },
    /// Grid worst-case principal payoff of a tabular contract.
    WorstCase {
        #[arg(long)]
        contract: PathBuf,
        #[arg(long)]
        cost: FunctionArg,
        #[arg(long)]
        utility: FunctionArg,
    },
    /// Optimal linear contract in the homogeneous bilateral setting.
    Bilateral {
        #[arg(long)]
        ku: Option<f64>,
        #[arg(long)]
        kc: Option<f64>,
        #[arg(long)]
        utility: FunctionArg,
        #[arg(long)]
        cost: FunctionArg,
        #[arg(long, default_value_t = 1)]
        dimension: usize,
    },
    /// Linear-contract equilibrium of the common-agency game.
    Agency {
        #[arg(long, default_value_t = 2)]
        principals: usize,
        #[arg(long)]
        ku: Option<f64>,
        #[arg(long)]
        kc: Option<f64>,
        /// Utility shared by every principal, or one file per principal with `--utility-file`.
        #[arg(long)]
        utility: Option<FunctionArg>,
        #[arg(long = "utility-file")]
        utility_files: Vec<PathBuf>,
        #[arg(long)]
        cost: FunctionArg,
        #[arg(long, default_value_t = 1)]
        dimension: usize,
    },
    /// Optimal budget-balanced shares for team production.
    Team {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Look for a profitable deviation from a team effort profile.
    Break {
        #[arg(long)]
        instance: PathBuf,
        /// JSON list of payment vectors, one per agent.
        #[arg(long)]
        contracts: PathBuf,
        #[arg(long)]
        profile: String,
        #[arg(long = "agent-cost", default_value = "square")]
        agent_cost: FunctionArg,
    },
    /// Run the randomized property suites and print a pass/fail matrix.
    Verify {
        /// Smaller suites for a fast smoke check.
        #[arg(long)]
        quick: bool,
    },
    /// Sweep degree grids and write ratio tables as CSV.
    Bench,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: cannot configure the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let c = &cli.common;
    let outcome = match cli.command {
        Command::Improve { contract, cost, utility, upper } => commands::improve(c, &contract, &cost, &utility, upper.as_deref()),
        Command::Envelope { contract, points, point } => commands::envelope(c, &contract, points.as_deref(), &point),
        Command::WorstCase { contract, cost, utility } => commands::worst_case(c, &contract, &cost, &utility),
        Command::Bilateral { ku, kc, utility, cost, dimension } => commands::bilateral(c, ku, kc, &utility, &cost, dimension),
        Command::Agency { principals, ku, kc, utility, utility_files, cost, dimension } => {
            commands::agency(c, principals, ku, kc, utility.as_ref(), &utility_files, &cost, dimension)
        }
        Command::Team { instance } => commands::team(c, &instance),
        Command::Break { instance, contracts, profile, agent_cost } => {
            commands::break_profile(c, &instance, &contracts, &profile, &agent_cost)
        }
        Command::Verify { quick } => commands::verify(c, quick),
        Command::Bench => bench::run(c),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &anyhow::Error) -> ExitCode {
    if let Some(s) = e.downcast_ref::<SchemaError>() {
        eprintln!("schema error: {s}");
        eprintln!("{}", serde_json::json!({"file": s.file, "pointer": s.pointer, "message": s.message}));
        return ExitCode::from(1);
    }
    if let Some(core) = e.downcast_ref::<robust_contracts::Error>() {
        if let robust_contracts::Error::Numeric { message, residuals } = core {
            eprintln!("numeric failure: {message}");
            eprintln!("{}", serde_json::json!({"message": message, "residuals": residuals}));
            return ExitCode::from(2);
        }
        eprintln!("error: {core}");
        return ExitCode::from(1);
    }
    eprintln!("error: {e:#}");
    ExitCode::from(1)
}

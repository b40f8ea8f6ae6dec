//! `ks`: batch front-end for robot validation, inverse kinematics,
//! trajectory planning and ESDF benchmarks.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or input error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ks_core::esdf::Seeding;

mod bench;
mod ik_cmd;
mod output;
mod plan_cmd;
mod robot_cmd;
mod scenario;

#[derive(Parser)]
#[command(name = "ks", version, about = "Dynamics-aware motion optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robot description tools.
    Robot {
        #[command(subcommand)]
        command: RobotCommand,
    },
    /// Plan, validate and export every problem of a scenario.
    Plan {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Plan without the torque cost; validation still checks torque.
        #[arg(long)]
        no_dynamics: bool,
        /// Trajectory seeds per problem.
        #[arg(long)]
        seeds: Option<usize>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Collision-free inverse kinematics for every problem's goals.
    Ik {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Time TSDF and ESDF construction and measure collision recall.
    EsdfBench {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Benchmark only this seeding strategy.
        #[arg(long, value_enum)]
        seeding: Option<SeedingArg>,
        /// Compare against an exhaustive distance transform.
        #[arg(long)]
        brute_force: bool,
    },
}

#[derive(Subcommand)]
enum RobotCommand {
    /// Check a robot description and report each invariant.
    Validate { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SeedingArg {
    Scatter,
    Gather,
}

impl From<SeedingArg> for Seeding {
    fn from(s: SeedingArg) -> Self {
        match s {
            SeedingArg::Scatter => Seeding::Scatter,
            SeedingArg::Gather => Seeding::Gather,
        }
    }
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Robot {
            command: RobotCommand::Validate { path },
        } => robot_cmd::validate(&path).map(status),
        Command::Plan {
            scenario,
            out,
            no_dynamics,
            seeds,
            json,
        } => plan_cmd::run(&scenario, &out, &plan_cmd::PlanFlags { no_dynamics, seeds, json }).map(status),
        Command::Ik { scenario, out } => ik_cmd::run(&scenario, &out).map(status),
        Command::EsdfBench {
            scenario,
            out,
            seeding,
            brute_force,
        } => bench::run(
            &scenario,
            &out,
            &bench::BenchFlags {
                seeding: seeding.map(Seeding::from),
                brute_force,
            },
        )
        .map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

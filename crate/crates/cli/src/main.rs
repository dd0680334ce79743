use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use panmpc::verify::Mutation;
use panmpc_cli::{simulate_command, verify_command, RunConfig};

#[derive(Parser)]
#[command(name = "panmpc", version, about = "Perception-aware NMPC simulator for tilted multi-rotors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop scenario and write its log, summary and plots.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override a scenario value, e.g. `--set ocp.N=25`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        plots: bool,
        /// Record measured solve times in the CSV (makes it run-dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Run the oracle suites and print a pass/fail table.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run only the named suites.
        #[arg(long)]
        suite: Vec<String>,
        #[arg(long, hide = true)]
        inject: Option<Injection>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Injection {
    FlipObstacleGradient,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let exit = match Cli::parse().command {
        Command::Simulate {
            scenario,
            out,
            overrides,
            plots,
            timing,
        } => simulate_command(&RunConfig {
            scenario,
            out,
            overrides,
            plots,
            timing,
        }),
        Command::Verify { seed, suite, inject } => {
            let mutation = inject.map(|Injection::FlipObstacleGradient| Mutation::FlipObstacleGradient);
            verify_command(seed, &suite, mutation)
        }
    };
    ExitCode::from(exit as u8)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exitctl::{execute, Command, ExitStatus, Overrides};

/// Exit-rate estimation and control for the noisy epidemic model.
#[derive(Parser)]
#[command(name = "exitctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `sim.n_paths`.
    #[arg(long)]
    n_paths: Option<u64>,
    /// Override `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo worker threads (default: all cores). Outputs do not
    /// depend on this value.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Check the configuration; writes nothing.
    Validate(Common),
    /// One trajectory as CSV.
    Simulate(Common),
    /// Survival curve and fitted exit rate.
    Survival(Common),
    /// Mean exit time.
    Meantime(Common),
    /// Principal eigenpair for the fixed control.
    Eigen {
        #[command(flatten)]
        common: Common,
        /// Also write the assembled operator as `row,col,value`.
        #[arg(long)]
        dump_operator: bool,
    },
    /// Policy iteration for the minimal exit rate.
    Optimize(Common),
    /// Optimize, then check the solution (exit 3 on failure).
    Verify(Common),
    /// Risk-sensitive values over `risk.thetas`.
    Risk(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(ExitStatus::Config as u8) } else { ExitCode::SUCCESS };
        }
    };
    let (command, common) = match cli.command {
        Sub::Validate(c) => (Command::Validate, c),
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Survival(c) => (Command::Survival, c),
        Sub::Meantime(c) => (Command::Meantime, c),
        Sub::Eigen { common, dump_operator } => (Command::Eigen { dump_operator }, common),
        Sub::Optimize(c) => (Command::Optimize, c),
        Sub::Verify(c) => (Command::Verify, c),
        Sub::Risk(c) => (Command::Risk, c),
    };
    let overrides = Overrides { seed: common.seed, n_paths: common.n_paths, out: common.out, workers: common.workers };
    match execute(command, &common.config, &overrides) {
        Ok(outcome) => {
            for line in &outcome.messages {
                println!("{line}");
            }
            for path in &outcome.files {
                println!("wrote {}", path.display());
            }
            ExitCode::from(outcome.status as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}

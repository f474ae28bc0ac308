use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vortmc::cli_io::{run, Experiment, ExitStatus, Overrides};

#[derive(Parser)]
#[command(name = "vortmc", version, about = "Monte Carlo estimators for stochastic Lagrangian vorticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sample count, overriding the configuration.
    #[arg(long)]
    samples: Option<usize>,
    /// Print nothing but errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Heat equation against its closed-form convolution.
    HeatCheck(Common),
    /// Newtonian potential of a ball.
    PoissonCheck(Common),
    /// Gradient and Hessian of the Newtonian potential.
    GradientCheck(Common),
    /// Biot–Savart velocity, its curl and divergence.
    BiotSavartCheck(Common),
    /// Coupled systems: nilpotent coupling, augmentation, finite differences.
    FkSystemCheck(Common),
    /// Forward and time-reversed initial-value estimators.
    FkReversalCheck(Common),
    /// Girsanov weights and the weighted NS map.
    GirsanovCheck(Common),
    /// Admissible horizon of the fixed point.
    TauBound(Common),
    /// Picard iteration, or transport along a prescribed velocity.
    NsSolve(Common),
    /// Error against step size and sample count.
    ConvergenceStudy(Common),
}

impl Command {
    fn split(self) -> (Experiment, Common) {
        match self {
            Command::HeatCheck(c) => (Experiment::HeatCheck, c),
            Command::PoissonCheck(c) => (Experiment::PoissonCheck, c),
            Command::GradientCheck(c) => (Experiment::GradientCheck, c),
            Command::BiotSavartCheck(c) => (Experiment::BiotSavartCheck, c),
            Command::FkSystemCheck(c) => (Experiment::FkSystemCheck, c),
            Command::FkReversalCheck(c) => (Experiment::FkReversalCheck, c),
            Command::GirsanovCheck(c) => (Experiment::GirsanovCheck, c),
            Command::TauBound(c) => (Experiment::TauBound, c),
            Command::NsSolve(c) => (Experiment::NsSolve, c),
            Command::ConvergenceStudy(c) => (Experiment::ConvergenceStudy, c),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitStatus::ConfigError.code() as u8 } else { 0 });
        }
    };
    let (experiment, common) = cli.command.split();
    let overrides = Overrides { seed: common.seed, samples: common.samples };
    let outcome = run(experiment, common.config.as_deref(), overrides, common.out.as_deref());
    if let Some(e) = &outcome.error {
        eprintln!("vortmc {experiment}: {e}");
    }
    if let Some(report) = &outcome.report {
        if !common.quiet {
            print!("{}", report.summary_text());
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
        } else {
            for row in report.failures() {
                eprintln!("FAIL {}: {} (oracle {:?}, tolerance {:?})", row.quantity, row.value, row.oracle_value, row.tolerance);
            }
        }
    }
    ExitCode::from(outcome.status.code() as u8)
}

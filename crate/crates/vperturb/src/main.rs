use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vperturb::commands::{self, BoundFlags, Context};
use vperturb::Format;
use vperturb_core::bound::{BoundVariant, PenaltyControl};

#[derive(Parser)]
#[command(name = "vperturb", version, about = "Virtual-perturbation diagnostics for SGD")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace every seed in the configuration with ones derived from this.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format for diagnose and compare.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    General,
    Synchronized,
    Comparable,
}

#[derive(Clone, Copy, ValueEnum)]
enum Penalty {
    Raw,
    Smoothness,
    Curvature,
}

#[derive(Subcommand)]
enum Command {
    /// Run SGD and record the trajectory.
    Train,
    /// Estimate the bound proxies along a recorded trajectory.
    Diagnose {
        /// Trajectory to diagnose; defaults to the one written by train.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Assemble a generalization bound from a diagnose summary.
    Bound {
        /// Summary written by diagnose.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Bound variant; defaults to bound.variant.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        /// Mismatch penalty; defaults to bound.penalty_control.
        #[arg(long, value_enum)]
        penalty: Option<Penalty>,
        /// Sub-Gaussian constant of the loss.
        #[arg(long = "R")]
        r: Option<f64>,
        /// Smoothness constant for the smoothness penalty.
        #[arg(long)]
        mu: Option<f64>,
        /// Hessian-Lipschitz constant for the curvature penalty.
        #[arg(long)]
        rho: Option<f64>,
        /// Trajectory for the curvature penalty.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run the property and oracle suite.
    Verify {
        /// Suite seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Smaller sweeps.
        #[arg(long)]
        quick: bool,
    },
    /// Diagnose one trajectory under every [[compare]] schedule.
    Compare {
        /// Trajectory to diagnose; defaults to the one written by train.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Context { config: cli.config, seed_override: cli.seed_override, out: cli.out, format: cli.format };
    let result = match cli.command {
        Command::Train => commands::train(&ctx),
        Command::Diagnose { trajectory } => commands::diagnose(&ctx, trajectory.as_deref()),
        Command::Bound { summary, variant, penalty, r, mu, rho, trajectory } => {
            let flags = BoundFlags {
                summary,
                variant: variant.map(|v| match v {
                    Variant::General => BoundVariant::General,
                    Variant::Synchronized => BoundVariant::Synchronized,
                    Variant::Comparable => BoundVariant::Comparable,
                }),
                penalty: penalty.map(|p| match p {
                    Penalty::Raw => PenaltyControl::Raw,
                    Penalty::Smoothness => PenaltyControl::Smoothness,
                    Penalty::Curvature => PenaltyControl::Curvature,
                }),
                r,
                mu,
                rho,
                trajectory,
            };
            commands::bound(&ctx, &flags)
        }
        Command::Verify { seed, quick } => commands::verify(&ctx, seed, quick),
        Command::Compare { trajectory } => commands::compare(&ctx, trajectory.as_deref()),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

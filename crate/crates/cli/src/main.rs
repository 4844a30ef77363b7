use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod runlog;

/// Solver and verification suite for mean field games with controlled drift
/// and diffusion.
#[derive(Parser)]
#[command(name = "mfg", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte-Carlo seed; overrides `mc.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only warnings and errors on the terminal.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the HJB equation with couplings frozen at the initial density.
    SolveHjb,
    /// Solve HJB and then transport the initial density.
    #[command(hide = true)]
    SolveFp {
        /// Test hook: plant a negative value in the initial density.
        #[arg(long, hide = true)]
        inject_negative: bool,
    },
    /// Damped Picard iteration for the coupled system.
    SolveMfg,
    /// Monte-Carlo checks against a previous solve-mfg output directory.
    VerifySde {
        /// Directory written by solve-mfg.
        #[arg(long)]
        from: PathBuf,
    },
    /// Regularity, hypothesis and class-M reports.
    Diagnose {
        /// Directory written by solve-hjb or solve-mfg; solves afresh if absent.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Pairwise sup-in-time Wasserstein-1 distances between density paths.
    Wasserstein {
        /// Density directories (the `m` folder of a solve).
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::SolveHjb => commands::solve_hjb(&cli.common),
        Command::SolveFp { inject_negative } => commands::solve_fp(&cli.common, inject_negative),
        Command::SolveMfg => commands::solve_mfg(&cli.common),
        Command::VerifySde { from } => commands::verify_sde(&cli.common, &from),
        Command::Diagnose { from } => commands::diagnose(&cli.common, from.as_deref()),
        Command::Wasserstein { paths } => commands::wasserstein(&cli.common, &paths),
    };
    match result {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::ContractFailure(why)) => {
            eprintln!("contract failure: {why}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 1 })
        }
    }
}

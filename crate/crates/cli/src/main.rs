use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use passlab_cli::commands::{self, CommandError};
use passlab_cli::config::RunConfig;

/// Pricing and verification laboratory for passport options and degenerate
/// parabolic PDEs.
#[derive(Parser)]
#[command(name = "passlab", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides [output].dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the engines
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Price a classical multivariate passport option
    PricePassport,
    /// Price the symmetric passport option and cross-check against Monte Carlo
    PriceSymmetric,
    /// Run a theorem-verification suite
    Verify,
    /// Transform a surface dump between normal and lognormal coordinates
    Transform,
    /// Simulate path ensembles and stream checkpoints to CSV
    Simulate,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --config PATH is required");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config_path.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let mut cfg = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let art = match commands::prepare(&cfg, cli.out.as_deref()) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };

    let result = match cli.command {
        Command::PricePassport => commands::cmd_price_passport(&cfg, &art).map(|()| true),
        Command::PriceSymmetric => commands::cmd_price_symmetric(&cfg, &art).map(|()| true),
        Command::Verify => commands::cmd_verify(&cfg, &art),
        Command::Transform => commands::cmd_transform(&cfg, &art).map(|()| true),
        Command::Simulate => commands::cmd_simulate(&cfg, &art).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // a verification suite that ran but found failing checks
        Ok(false) => ExitCode::from(1),
        Err(e) => fail(e),
    }
}

fn fail(e: CommandError) -> ExitCode {
    match e {
        CommandError::Config(m) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        CommandError::Numerical(m) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

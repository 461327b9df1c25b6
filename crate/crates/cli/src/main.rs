use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wlc_core::app::{self, AppError, Command, RunConfig, RunOptions};

/// Finite-width Gaussian approximation certificates for random networks.
#[derive(Parser)]
#[command(name = "wlc", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Total variation and 2-Wasserstein certificate for one configuration.
    Certify(RunArgs),
    /// Width sweep with a CSV table and log-log rate fits.
    Rate(RunArgs),
    /// Posterior bound for a likelihood from the registry.
    Posterior(RunArgs),
    /// Built-in property suite.
    Selftest(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; fix it for bit-reproducible replays.
    #[arg(long, env = "WLC_THREADS")]
    threads: Option<usize>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn fail(err: &AppError) -> ExitCode {
    match err {
        AppError::Invalid(diagnostics) => {
            let text = serde_json::to_string_pretty(diagnostics).expect("diagnostics serialize");
            eprintln!("{text}");
        }
        other => eprintln!("error: {other}"),
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Certify(a) => (Command::Certify, a),
        Cmd::Rate(a) => (Command::Rate, a),
        Cmd::Posterior(a) => (Command::Posterior, a),
        Cmd::Selftest(a) => (Command::Selftest, a),
    };
    let mut config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match config.command {
        Some(declared) if declared != command => {
            let diag = AppError::Invalid(vec![app::Diagnostic {
                severity: app::Severity::Error,
                code: "command_mismatch".into(),
                message: format!("configuration declares `{declared}` but `{command}` was invoked"),
            }]);
            return fail(&diag);
        }
        _ => config.command = Some(command),
    }
    let options = RunOptions { seed: args.seed, threads: args.threads, out_dir: args.out };
    match app::run(&config, &options) {
        Ok(outcome) => {
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            println!("{command}: {} ({:?})", outcome.summary, outcome.status);
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}

//! Command-line surface for jetstorm: jet planning, estimator verification,
//! PINN solves and scaling benchmarks, all emitting JSON or CSV.

pub mod alloc;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

/// Failure of one invocation, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] jetstorm_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NO_PLAN: i32 = 2;
pub const EXIT_UNSUPPORTED: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use jetstorm_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::NoPlan { .. }) => EXIT_NO_PLAN,
            CliError::Core(E::Unsupported(_) | E::DenseImpossible { .. }) => EXIT_UNSUPPORTED,
            CliError::Core(E::Divergence { .. }) => EXIT_DIVERGED,
            CliError::Core(E::InvalidArgument(_) | E::UnknownProblem(_)) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "jetstorm", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (default `jetstorm-out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Jet plans for mixed partial derivatives.
    Plan {
        /// `key.path=value` config overrides.
        overrides: Vec<String>,
    },
    /// Estimator expectations against exhaustive and finite-difference oracles.
    Verify { overrides: Vec<String> },
    /// Train a PINN on a registered problem.
    Solve { overrides: Vec<String> },
    /// Step time and memory scaling sweeps.
    Bench { overrides: Vec<String> },
}

impl Command {
    fn overrides(&self) -> &[String] {
        match self {
            Command::Plan { overrides }
            | Command::Verify { overrides }
            | Command::Solve { overrides }
            | Command::Bench { overrides } => overrides,
        }
    }

    fn section(&self) -> &'static str {
        match self {
            Command::Plan { .. } => "plan",
            Command::Verify { .. } => "verify",
            Command::Solve { .. } => "solve",
            Command::Bench { .. } => "bench",
        }
    }
}

/// Reads the config file, applies overrides and flags, and validates.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?,
        None => "{}".to_string(),
    };
    let mut cfg = RunConfig::parse(&text, cli.command.overrides())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command line, printing the main artifact to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let section = cli.command.section();
    let missing = || CliError::Usage(format!("config has no `{section}` section"));
    if let Some(n) = cfg.threads {
        // A pool may already exist when embedded; the flag is then advisory.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("jetstorm-out"));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;
    match cli.command {
        Command::Plan { .. } => {
            let json = commands::plan(cfg.plan.as_ref().ok_or_else(missing)?, &out)?;
            println!("{json}");
        }
        Command::Verify { .. } => {
            let rows = commands::verify(cfg.verify.as_ref().ok_or_else(missing)?, cfg.seed, &out)?;
            print!("{}", commands::checks_csv(&rows));
            let failed = rows.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(CliError::ChecksFailed {
                    failed,
                    total: rows.len(),
                });
            }
        }
        Command::Solve { .. } => {
            let summary = commands::solve(cfg.solve.as_ref().ok_or_else(missing)?, cfg.seed, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Bench { .. } => {
            let rows = commands::bench(cfg.bench.as_ref().ok_or_else(missing)?, cfg.seed, &out)?;
            print!("{}", commands::bench_csv(&rows));
        }
    }
    Ok(())
}

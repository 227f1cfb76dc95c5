//! `fracp`: reproducible experiments for the weighted nonlocal eigenvalue
//! toolkit. One command per process; all outputs carry the resolved config
//! hash and are byte-identical across reruns with the same seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, violated parameter constraints (exit 2).
    Validation(String),
    /// A solver gave up before reaching its tolerance (exit 3).
    Solver(String),
    /// A verdict could not be decided either way (exit 4).
    Inconclusive(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation: {m}"),
            CliError::Solver(m) => write!(f, "solver: {m}"),
            CliError::Inconclusive(m) => write!(f, "inconclusive: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Inconclusive(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fracp",
    about = "Weight classes, eigenpairs, sup-norm bounds and branch continuation for the weighted fractional p-Laplacian",
    version
)]
struct Cli {
    /// Output directory (falls back to $FRACP_OUTDIR, then the working dir).
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Worker cap for the parallel sections.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide membership of a boundary power weight in an integrability class.
    CheckWeight {
        /// Exponent of the boundary power (1 - |x|)^{-beta}.
        #[arg(long)]
        beta: f64,
        /// Ambient dimension of the unit ball.
        #[arg(long = "N", default_value_t = 3)]
        dim: u32,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        /// One of: aq, wq, tilde-wq, lorentz, all.
        #[arg(long)]
        class: String,
        /// First Lorentz exponent (lorentz class only).
        #[arg(long, default_value_t = 1.5)]
        p0: f64,
        /// Second Lorentz exponent (lorentz class only).
        #[arg(long, default_value_t = 2.0)]
        q0: f64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First and second eigenpairs of the configured weighted problem.
    Eigen {
        #[arg(long)]
        config: PathBuf,
        /// Emit the dense-oracle spectrum (p = 2 only).
        #[arg(long)]
        oracle: bool,
    },
    /// Certify a sup-norm bound for a stored solution by level-set iteration.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// CSV of nodal values (columns x,u) on the configured grid.
        #[arg(long)]
        solution: PathBuf,
    },
    /// Solve the configured nonlinear problem (non-resonant or small-solution
    /// search).
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Continue the solution branch from the first eigenvalue and locate the
    /// bifurcation point.
    Bifurcate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn resolve_outdir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("FRACP_OUTDIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let outdir = resolve_outdir(cli.outdir);
    match cli.command {
        Command::CheckWeight {
            beta,
            dim,
            p,
            s,
            q,
            class,
            p0,
            q0,
            out,
        } => commands::cmd_check_weight(beta, dim, p, s, q, &class, p0, q0, out.as_deref()),
        Command::Eigen { config, oracle } => {
            let mut cfg = Config::load(&config)?;
            if oracle {
                let mut ecfg = cfg.eigen.unwrap_or_default();
                ecfg.oracle = true;
                cfg.eigen = Some(ecfg);
            }
            commands::cmd_eigen(&cfg, &outdir, cli.threads)
        }
        Command::Bounds { config, solution } => {
            let cfg = Config::load(&config)?;
            commands::cmd_bounds(&cfg, &outdir, &solution)
        }
        Command::Solve { config } => {
            let cfg = Config::load(&config)?;
            commands::cmd_solve(&cfg, &outdir)
        }
        Command::Bifurcate { config } => {
            let cfg = Config::load(&config)?;
            commands::cmd_bifurcate(&cfg, &outdir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

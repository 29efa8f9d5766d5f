//! Benchmark and experiment frontend for the agca multigrid library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agca_cli::commands::*;
use agca_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "agca",
    about = "Matrix-free geometric multigrid with adaptive Galerkin coarsening: \
             solves, sinker benchmark sweeps, and the coarse-operator memory model",
    version
)]
struct Cli {
    /// Path to the TOML run configuration (defaults apply if omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<String>,

    /// Worker threads for sweep execution (1 = deterministic serial run).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Outer iteration cap override.
    #[arg(long, global = true)]
    cap: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configured problem (Stokes or the scalar validation).
    Solve,
    /// Run the convergence sweep over the configured parameter grid.
    Sweep,
    /// Sweep the adaptive coarsening tolerance nu.
    NuSweep,
    /// Study the Galerkin-coarsened fraction over macro-grid sizes.
    Cagca,
    /// Print the analytic coarse-operator memory table.
    MemoryModel,
    /// Run the built-in oracle and invariant checks.
    Selftest,
    /// Render SVG plots from a sweep CSV.
    Report {
        /// Input CSV produced by a sweep command.
        #[arg(long)]
        input: PathBuf,
        /// Column for the x axis.
        #[arg(long, default_value = "DR")]
        x: String,
        /// Column for the y axis.
        #[arg(long, default_value = "iterations")]
        y: String,
    },
    /// Dump the mesh and the coarsening plan as plain text.
    Dump {
        /// Refinement level of the vertex/element listing.
        #[arg(long)]
        level: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(cap) = cli.cap {
        cfg.solver.max_iter = cap;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Solve => cmd_solve(&load_config(cli)?),
        Command::Sweep => cmd_sweep(&load_config(cli)?, cli.threads.max(1)),
        Command::NuSweep => cmd_nu_sweep(&load_config(cli)?),
        Command::Cagca => cmd_cagca(&load_config(cli)?),
        Command::MemoryModel => cmd_memory_model(&load_config(cli)?),
        Command::Selftest => cmd_selftest(),
        Command::Report { input, x, y } => {
            let out = cli.out.clone().unwrap_or_else(|| "out".into());
            cmd_report(input, &out, x, y)
        }
        Command::Dump { level } => cmd_dump(&load_config(cli)?, *level),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

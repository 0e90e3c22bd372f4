use clap::{Parser, Subcommand};
use fraclab::harness::config::{ExperimentConfig, ExperimentKind};
use fraclab::harness::{emit_plots, presets, run_experiment};
use fraclab::Execution;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fraclab", version, about = "Weighted extensions, DtN maps and the reduction pipeline")]
struct Cli {
    /// TOML experiment file; the subcommand overrides its `experiment.kind`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (default `runs/<kind>`). For `plots`, the run to read.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Tangential refinement levels applied on top of the config.
    #[arg(long, global = true, default_value_t = 0)]
    refine: u32,
    /// Run every batch on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Mixed extension problem for the configured datum.
    SolveExtension,
    /// Calibrated fractional DtN on W and local DtN on the Ω₁ loop.
    Dtn,
    /// Vertical-integral reduction with its error budget.
    Reduce,
    /// Upper and lower truncation slopes and the vertical decay.
    Tails,
    /// Operator T, its SVD, the cost curve and the adjoint check.
    Runge,
    /// Three-balls exponents, transfer fit and ball chain.
    Smallness,
    /// Fractional against local DtN distances over a metric ladder.
    Stability,
    /// Fast invariant checks on a small grid.
    Selftest,
    /// Plot scripts for an existing run directory.
    Plots,
}

impl Command {
    fn kind(self) -> Option<ExperimentKind> {
        Some(match self {
            Command::SolveExtension => ExperimentKind::SolveExtension,
            Command::Dtn => ExperimentKind::Dtn,
            Command::Reduce => ExperimentKind::Reduce,
            Command::Tails => ExperimentKind::Tails,
            Command::Runge => ExperimentKind::Runge,
            Command::Smallness => ExperimentKind::Smallness,
            Command::Stability => ExperimentKind::Stability,
            Command::Selftest => ExperimentKind::Selftest,
            Command::Plots => return None,
        })
    }
}

fn run(cli: Cli) -> fraclab::Result<()> {
    let Some(kind) = cli.command.kind() else {
        let dir = cli
            .out
            .ok_or_else(|| fraclab::Error::Config("plots needs --out <run directory>".into()))?;
        for p in emit_plots(&dir)? {
            println!("{}", p.display());
        }
        return Ok(());
    };
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => presets::preset(kind),
    };
    cfg.experiment.kind = kind;
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| cfg.experiment.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let m = run_experiment(&cfg, &out, cli.refine, exec)?;
    println!("{} -> {}", kind.name(), out.display());
    for (k, v) in &m.budget {
        println!("  {k:<28} {v:.6e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

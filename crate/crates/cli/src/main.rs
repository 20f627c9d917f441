//! `volgsc`: batch driver for the volatility and synthetic-control pipeline.

mod artifacts;
mod commands;
mod config;
mod fail;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::fail::{CliResult, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "volgsc", version, about = "Stochastic volatility and generalized synthetic control", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat TOML config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    flags: RunConfig,
}

#[derive(Debug, Args)]
struct RerunArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    manifest: PathBuf,

    /// Output directory for the re-executed artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the SV model on daily returns (or prices).
    SvEstimate(RunArgs),
    /// Aggregate daily log-volatility to monthly volatility.
    SvAggregate(RunArgs),
    /// ATT with interactive fixed effects and bootstrap inference.
    Gsc(RunArgs),
    /// Cross-validate the number of latent factors.
    Cv(RunArgs),
    /// One estimate per treated unit.
    PerUnit(RunArgs),
    /// In-time placebo: shift adoption earlier on pre-treatment data.
    PlaceboTime(RunArgs),
    /// In-space placebo: treat each control in turn.
    PlaceboSpace(RunArgs),
    /// Equivalence test on pre-treatment effects.
    Equivalence(RunArgs),
    /// Collate earlier artifacts into report.md.
    Report(RunArgs),
    /// Write a synthetic panel with the layout of the bundled demo.
    Simulate(RunArgs),
    /// Re-execute a manifest and compare artifact hashes.
    Rerun(RerunArgs),
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let (name, args) = match cli.command {
        Command::Rerun(a) => {
            let out = a.out.or_else(|| Some(RunConfig::default().out_dir()));
            return commands::rerun(&a.manifest, out).map(|_| ());
        }
        Command::SvEstimate(a) => ("sv-estimate", a),
        Command::SvAggregate(a) => ("sv-aggregate", a),
        Command::Gsc(a) => ("gsc", a),
        Command::Cv(a) => ("cv", a),
        Command::PerUnit(a) => ("per-unit", a),
        Command::PlaceboTime(a) => ("placebo-time", a),
        Command::PlaceboSpace(a) => ("placebo-space", a),
        Command::Equivalence(a) => ("equivalence", a),
        Command::Report(a) => ("report", a),
        Command::Simulate(a) => ("simulate", a),
    };
    let file = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    commands::run(name, args.flags.over(file)).map(|_| ())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}

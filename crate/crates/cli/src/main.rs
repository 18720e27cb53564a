//! `govprobe`: balance government instances, pool attention features, and
//! run probing experiments from the command line.
//!
//! Exit status is 0 on success, 1 for usage and validation errors and 2 for
//! I/O failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use govprobe::Execution;

use commands::*;
use config::{Config, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "govprobe", version, about = "Probe attention heads for verbal government relations")]
struct Cli {
    /// Seed for every random choice (default: config file, else 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON config file supplying defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Worker threads for experiment cells and pooling (default 1).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Only report errors on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,

    /// More progress output; repeat for debug detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a government bank file and print a summary.
    BankValidate(BankValidateArgs),
    /// Match a CoNLL-U corpus against a bank and write instances as JSONL.
    ExtractInstances(ExtractArgs),
    /// Balance instances and write a train/test split manifest.
    Balance(BalanceArgs),
    /// Max-pool an attention container into feature vectors (JSONL).
    Pool(PoolArgs),
    /// Fit one probe on the train side of a split.
    Train(TrainArgs),
    /// Score a saved probe on the test side of a split.
    Eval(EvalArgs),
    /// All probes on all heads, optionally broken down by NEAR/FAR.
    Overall(OverallArgs),
    /// Probes on the first N layers for a range of N.
    SweepLayers(SweepArgs),
    /// Top-N head inclusion, exclusion and random baselines.
    AblateHeads(AblateArgs),
    /// Train without some patterns or governor lemmas, test on them.
    Holdout(HoldoutArgs),
    /// Export per-instance head features, with an optional 2-D PCA.
    ExportProjection(ProjectionArgs),
    /// Instance counts by label, distance class, POS and feature.
    Stats(StatsArgs),
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let jobs = cli.jobs.or(config.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(govprobe::Error::InvalidArgument("--jobs must be at least 1".into()).into());
    }
    let ctx = Context {
        seed: config.seed(cli.seed),
        config,
        exec: if jobs > 1 { Execution::Parallel } else { Execution::Sequential },
    };
    with_threads(jobs, || dispatch(&ctx, cli.command))
}

fn dispatch(ctx: &Context, command: Command) -> Result<()> {
    match command {
        Command::BankValidate(a) => bank_validate(ctx, a),
        Command::ExtractInstances(a) => extract_instances(ctx, a),
        Command::Balance(a) => balance(ctx, a),
        Command::Pool(a) => pool(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::Overall(a) => overall(ctx, a),
        Command::SweepLayers(a) => sweep_layers(ctx, a),
        Command::AblateHeads(a) => ablate_heads(ctx, a),
        Command::Holdout(a) => holdout(ctx, a),
        Command::ExportProjection(a) => export_projection(ctx, a),
        Command::Stats(a) => stats(ctx, a),
    }
}

#[cfg(feature = "parallel")]
fn with_threads(jobs: usize, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    if jobs == 1 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads(jobs: usize, f: impl FnOnce() -> Result<()>) -> Result<()> {
    if jobs > 1 {
        log::warn!("built without parallel support; ignoring --jobs {jobs}");
    }
    f()
}

/// 2 when the failure came from the filesystem or a stream, else 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<govprobe::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

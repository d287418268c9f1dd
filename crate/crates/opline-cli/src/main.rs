//! Command-line driver: one subcommand per pipeline stage, a `pipeline`
//! subcommand running all of them in order, and `verify` for re-checking
//! every recorded artifact digest.

mod config;
mod csvutil;
mod manifest;
mod report;
mod stages;
mod svg;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use stages::{run_pipeline, run_stage, Ctx, Stage};

#[derive(Parser)]
#[command(name = "opline", about = "Operator-line lab pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts and manifests.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-regime and per-coordinate fan-out.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every regime and write the seeded datasets.
    GenData(RunArgs),
    /// Train the family anchor on the support regimes.
    TrainAnchor(RunArgs),
    /// Fine-tune the two endpoint experts from the anchor.
    FinetuneEndpoints(RunArgs),
    /// Roll out every bank coordinate on the target regimes.
    MergeSweep(RunArgs),
    /// Calibrate the coordinate scale on held-out validation regimes.
    Calibrate(RunArgs),
    /// Run the coordinate selectors and record their choices.
    Select(RunArgs),
    /// Evaluate every method and write the metric tables.
    Evaluate(RunArgs),
    /// Verify the continuation-bound mathematics on the trained line.
    TheoryAudit(RunArgs),
    /// Emit tables, plots, and the text summary.
    Report(RunArgs),
    /// Run all stages in order.
    Pipeline(RunArgs),
    /// Re-verify all artifact digests recorded in the stage manifests.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one stage by name (gen-data, train-anchor, ...).
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Stage name.
        #[arg(long)]
        stage: String,
    },
}

fn build_ctx(args: &RunArgs) -> Result<Ctx> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.data.seed = seed;
    }
    std::fs::create_dir_all(&args.out)?;
    Ok(Ctx::new(cfg, args.out.clone()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(a) => run_stage(&build_ctx(&a)?, Stage::GenData),
        Command::TrainAnchor(a) => run_stage(&build_ctx(&a)?, Stage::TrainAnchor),
        Command::FinetuneEndpoints(a) => run_stage(&build_ctx(&a)?, Stage::FinetuneEndpoints),
        Command::MergeSweep(a) => run_stage(&build_ctx(&a)?, Stage::MergeSweep),
        Command::Calibrate(a) => run_stage(&build_ctx(&a)?, Stage::Calibrate),
        Command::Select(a) => run_stage(&build_ctx(&a)?, Stage::Select),
        Command::Evaluate(a) => run_stage(&build_ctx(&a)?, Stage::Evaluate),
        Command::TheoryAudit(a) => run_stage(&build_ctx(&a)?, Stage::TheoryAudit),
        Command::Report(a) => run_stage(&build_ctx(&a)?, Stage::Report),
        Command::Pipeline(a) => run_pipeline(&build_ctx(&a)?),
        Command::Verify { out } => {
            let checked = manifest::verify_all(&out)?;
            println!("verified {checked} artifacts");
            Ok(())
        }
        Command::Run { args, stage } => {
            let Some(stage) = Stage::from_name(&stage) else {
                bail!(
                    "unknown stage '{stage}'; expected one of {}",
                    Stage::all().map(|s| s.name()).join(", ")
                );
            };
            run_stage(&build_ctx(&args)?, stage)
        }
    }
}

//! `gpsg` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gpsg::kernel::{GpObservation, DEFAULT_FULL_GP_CAP};
use gpsg::runner::{self, ExperimentConfig, RunMode};
use gpsg::tactile::SampleConfig;

#[derive(Parser)]
#[command(name = "gpsg", version, about = "Incremental visuo-tactile shape mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate depth and touches for a mesh and reconstruct it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Snapshot interval in touches.
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct from a recorded depth image and touch stream.
    Replay {
        /// Records directory written by `run`.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Seed of the recorded run; it fixes the evaluation samples.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the lattice posterior with a dense GP on the depth samples.
    CompareGp {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("load config {}", path.display()))
}

fn finish(config: &ExperimentConfig, output: &runner::RunOutput) -> Result<()> {
    runner::emit_outputs(output, &config.output_dir, config.snapshot_interval).context("write outputs")?;
    print!("{}", runner::summary_text(&output.summary));
    log::info!("outputs written to {}", config.output_dir.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            snapshots,
            out,
        } => {
            let mut cfg = load(&config)?;
            cfg.mode = RunMode::Sim;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(k) = snapshots {
                cfg.snapshot_interval = k;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let output = runner::run_experiment(&cfg).context("run")?;
            finish(&cfg, &output)
        }
        Command::Replay {
            records,
            config,
            seed,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            cfg.mode = RunMode::Replay;
            cfg.records = Some(records);
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let output = runner::run_experiment(&cfg).context("replay")?;
            finish(&cfg, &output)
        }
        Command::CompareGp { config } => {
            let mut cfg = load(&config)?;
            let gt = runner::load_ground_truth(&cfg).context("load mesh")?;
            // The dense kernel matrix is only positive definite when every
            // observation pair lies well inside the support.
            let support = *cfg
                .kernel_support
                .get_or_insert(2.0 * gt.mesh().bounding_box().diagonal());
            let depth = runner::simulate_depth(&cfg, &gt).context("render depth")?;
            let set = gpsg::tactile::depthmap_to_samples(
                &depth,
                &SampleConfig {
                    budget: cfg.depth_budget.min(DEFAULT_FULL_GP_CAP),
                    sigma: cfg.sigma_depth,
                    perturb: false,
                },
            )
            .context("depth samples")?;
            let mut graph = runner::build_graph(&cfg, gt.mesh()).context("build graph")?;
            graph.add_measurements(&set.samples, gpsg::gpsg::SourceTag::Depth, 0);
            let obs: Vec<GpObservation> = set.samples.iter().map(GpObservation::from).collect();
            let report = graph
                .compare_to_full_gp(&obs, DEFAULT_FULL_GP_CAP)
                .context("full GP comparison")?;
            println!("support={support:.6e}");
            println!("observations={}", obs.len());
            println!("nodes_compared={}", report.nodes_compared);
            println!("max_abs_phi={:.6e}", report.max_abs_phi);
            println!("mean_abs_phi={:.6e}", report.mean_abs_phi);
            Ok(())
        }
    }
}

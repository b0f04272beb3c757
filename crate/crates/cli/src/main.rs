use std::path::PathBuf;
use std::process::ExitCode;

use causemm::config::{ExperimentConfig, MaskSource, Stage};
use causemm::pipeline::{self, Layout, RunOptions};
use causemm::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "causemm",
    version,
    about = "Causal structure learning and interventional sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set causal_ae.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overwrite artifacts produced under a different config.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the ground-truth graph and an observational dataset.
    Generate(Common),
    /// Learn a DAG from a dataset and score it against the truth if present.
    LearnStructure {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV (default: the run's generated dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the causal autoencoder.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Mask source (default: `mask_source` from the config).
        #[arg(long, value_enum)]
        mask: Option<MaskSource>,
        /// Graph JSON to take the mask from, overriding `--mask`.
        #[arg(long)]
        mask_file: Option<PathBuf>,
    },
    /// Write σ-contour reports for the configured intervention pairs.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every stage with one manifest.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Skip stages already completed under this config.
        #[arg(long)]
        resume: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    let load = |c: &Common| ExperimentConfig::load(&c.config, &c.overrides);
    let opts = |c: &Common| RunOptions {
        force: c.force,
        resume: false,
    };
    match cli.command {
        Command::Generate(common) => {
            let config = load(&common)?;
            pipeline::run_stage(&config, Stage::Generate, opts(&common), |l| {
                pipeline::run_generate(&config, l)
            })?;
        }
        Command::LearnStructure { common, dataset } => {
            let config = load(&common)?;
            let layout = Layout::new(&config.output_dir);
            let dataset = dataset.unwrap_or_else(|| layout.dataset());
            pipeline::run_stage(&config, Stage::LearnStructure, opts(&common), |l| {
                pipeline::run_learn_structure(&config, l, &dataset)
            })?;
        }
        Command::Train {
            common,
            dataset,
            mask,
            mask_file,
        } => {
            let config = load(&common)?;
            let layout = Layout::new(&config.output_dir);
            let dataset = dataset.unwrap_or_else(|| layout.dataset());
            let mask_path = mask_file.unwrap_or_else(|| match mask.unwrap_or(config.mask_source) {
                MaskSource::Learned => layout.learned_graph(),
                MaskSource::Truth => pipeline::truth_graph_path(&dataset),
            });
            pipeline::run_stage(&config, Stage::Train, opts(&common), |l| {
                pipeline::run_train(&config, l, &dataset, &mask_path)
            })?;
        }
        Command::Evaluate {
            common,
            dataset,
            checkpoint,
        } => {
            let config = load(&common)?;
            let layout = Layout::new(&config.output_dir);
            let dataset = dataset.unwrap_or_else(|| layout.dataset());
            let checkpoint = checkpoint.unwrap_or_else(|| layout.checkpoint());
            pipeline::run_stage(&config, Stage::Evaluate, opts(&common), |l| {
                pipeline::run_evaluate(&config, l, &dataset, &checkpoint)
            })?;
        }
        Command::Pipeline { common, resume } => {
            let config = load(&common)?;
            let manifest = pipeline::run_pipeline(
                &config,
                RunOptions {
                    force: common.force,
                    resume,
                },
            )?;
            for rec in &manifest.stages {
                println!(
                    "{:<16} {:>9.2}s  {} artifact(s)",
                    rec.stage.name(),
                    rec.seconds,
                    rec.artifacts.len()
                );
                for note in &rec.notes {
                    println!("  note: {note}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

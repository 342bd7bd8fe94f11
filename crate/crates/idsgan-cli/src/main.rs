//! `idsgan` — train, augment, and evaluate the intrusion-detection pipeline.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use idsgan_core::error::Error;
use idsgan_core::metrics::{round4, EvaluationReport};
use idsgan_core::pipeline::{run_all, run_stage, DatasetKind, PipelineConfig, Stage};

#[derive(Parser)]
#[command(
    name = "idsgan",
    version,
    about = "CNN-with-attention intrusion detection with GAN-based augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed override; every stage stream derives from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Dataset schema override.
    #[arg(long, global = true, value_enum)]
    dataset: Option<DatasetArg>,

    /// Classifier epoch-count override.
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,

    /// Mini-batch size override.
    #[arg(long, global = true, value_name = "N")]
    batch: Option<usize>,

    /// Uniform synthetic-row count for every class (file config gives
    /// per-class control).
    #[arg(long = "synthetic-per-class", global = true, value_name = "N")]
    synthetic_per_class: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and preprocess the input files; persist splits and fitted state.
    Prepare,
    /// Train the baseline classifier on the prepared training split.
    Train,
    /// Train one GAN per class with a nonzero synthetic count.
    Gan,
    /// Sample synthetic rows from the trained GANs.
    Synth,
    /// Augment the training split and train the comparison model.
    Retrain,
    /// Score the saved models on the saved test split.
    Evaluate,
    /// Run every stage in order and print the before/after comparison.
    RunAll,
    /// Render report files from the saved evaluation.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Kdd,
    Cicids,
    Csv,
}

impl From<DatasetArg> for DatasetKind {
    fn from(value: DatasetArg) -> Self {
        match value {
            DatasetArg::Kdd => DatasetKind::Kdd,
            DatasetArg::Cicids => DatasetKind::Cicids,
            DatasetArg::Csv => DatasetKind::Csv,
        }
    }
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Usage("--config <PATH> is required".into()))?;
    let mut cfg = PipelineConfig::from_toml_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(dataset) = cli.dataset {
        cfg.dataset = dataset.into();
    }
    if let Some(epochs) = cli.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch) = cli.batch {
        cfg.train.batch_size = batch;
    }
    if let Some(n) = cli.synthetic_per_class {
        // padded; entries beyond the class count are ignored downstream
        cfg.synthetic_per_class = vec![n; 64];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(report: &EvaluationReport) -> String {
    format!(
        "{}: accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4} ({} real + {} synthetic train rows)",
        report.label,
        round4(report.accuracy),
        round4(report.weighted_avg.f1),
        round4(report.macro_avg.f1),
        report.provenance.real,
        report.provenance.synthetic
    )
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = effective_config(cli)?;
    match cli.command {
        Command::Prepare => run_stage(&cfg, Stage::Prepare)?,
        Command::Train => run_stage(&cfg, Stage::Train)?,
        Command::Gan => run_stage(&cfg, Stage::Gan)?,
        Command::Synth => run_stage(&cfg, Stage::Synth)?,
        Command::Retrain => run_stage(&cfg, Stage::Retrain)?,
        Command::Evaluate => run_stage(&cfg, Stage::Evaluate)?,
        Command::Report => run_stage(&cfg, Stage::Report)?,
        Command::RunAll => {
            let outcome = run_all(&cfg)?;
            println!("{}", summarize(&outcome.baseline));
            println!("{}", summarize(&outcome.augmented));
            println!("comparison: {}", outcome.comparison_path.display());
            return Ok(());
        }
    }
    println!("ok: artifacts in {}", cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

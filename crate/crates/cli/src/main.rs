use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sfdann::harness::{self, DataSource, ExperimentConfig};
use sfdann::optim::{Checkpoint, Group};
use sfdann::train::Model;

/// Smart-filter domain adversarial training for 1-D vibration signals.
#[derive(Debug, Parser)]
#[command(name = "sfdann", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured variant over every seed and write results.
    Train { config: PathBuf },
    /// Run the five-arm ablation on shared splits and seeds.
    Ablate { config: PathBuf },
    /// Mean and one-third-octave spectra of one class, before and after the filter.
    Spectra {
        checkpoint: PathBuf,
        /// Experiment config describing the data the checkpoint was trained on.
        data: PathBuf,
        #[arg(long)]
        class: usize,
        /// Output directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the 64-d feature vector and prediction of every sample.
    Features {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter group on a tiny network.
    Gradcheck {
        /// Corrupt one analytic gradient entry to prove the check bites.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Write the synthetic corpus of a config as a recording tree.
    Synth { config: PathBuf, outdir: PathBuf },
}

fn out_dir(explicit: Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| {
        checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn load_checkpoint(path: &Path) -> Result<(Model, u64)> {
    let ckpt = Checkpoint::read(path)?;
    let model = harness::model_from_checkpoint(&ckpt)?;
    let seed = harness::checkpoint_seed(&ckpt)?;
    Ok((model, seed))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = harness::run(&cfg)?;
            print!("{}", report.summary);
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Ablate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = harness::ablate(&cfg)?;
            print!("{}", report.summary);
            println!("wrote {}", cfg.out_dir.join("ablation.csv").display());
        }
        Command::Spectra {
            checkpoint,
            data,
            class,
            out,
        } => {
            let (model, seed) = load_checkpoint(&checkpoint)?;
            let cfg = ExperimentConfig::load(&data)?;
            let (source, target, fs) = harness::experiment_data(&cfg, seed)?;
            let report = harness::export_spectra(&model, &source, &target, class, fs)?;
            let dir = out_dir(out, &checkpoint);
            let spectrum = dir.join(format!("spectrum_class{class}.csv"));
            let octave = dir.join(format!("octave_class{class}.csv"));
            write_file(&spectrum, &report.spectrum_csv())?;
            write_file(&octave, &report.octave_csv())?;
            println!("wrote {}", spectrum.display());
            println!("wrote {}", octave.display());
        }
        Command::Features {
            checkpoint,
            data,
            out,
        } => {
            let (model, seed) = load_checkpoint(&checkpoint)?;
            let cfg = ExperimentConfig::load(&data)?;
            let (source, target, _) = harness::experiment_data(&cfg, seed)?;
            let csv = harness::export_features(&model, &[&source, &target])?;
            let path = out_dir(out, &checkpoint).join("features.csv");
            write_file(&path, &csv)?;
            println!("wrote {}", path.display());
        }
        Command::Gradcheck { inject_fault } => {
            let fault = inject_fault.then_some(Group::Filter);
            let (text, ok, _) = harness::gradcheck(fault)?;
            print!("{text}");
            if !ok {
                eprintln!("gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Synth { config, outdir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let DataSource::Synthetic { config: synth, seed } = &cfg.data else {
                bail!("{}: `data.kind` must be synthetic", config.display());
            };
            let files = harness::write_synthetic(synth, *seed, &outdir)?;
            println!("wrote {} recordings under {}", files.len(), outdir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

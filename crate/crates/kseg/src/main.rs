use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kseg::config::{config_keys_help, load_config};
use kseg::dataset::Split;
use kseg::CmdError;

#[derive(Parser)]
#[command(
    name = "kseg",
    version,
    about = "Cardiac segmentation straight from sparse k-space samples: \
             synthetic cine data, training, evaluation, and rendering",
    after_long_help = config_keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cine dataset with train/val/test splits
    SynthData {
        /// Dataset directory to create
        #[arg(long)]
        out: PathBuf,
        /// JSON run config; omitted sections fall back to defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dot-path config override, e.g. --override phantom.T=10
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Replace an existing dataset in the output directory
        #[arg(long)]
        force: bool,
    },
    /// Train a model and write a checkpoint series plus a CSV log
    Train {
        /// Dataset directory (from synth-data)
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoints and the training log
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint instead of initializing fresh
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint over a split at each configured acceleration
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split to score: train, val, or test
        #[arg(long, default_value = "test")]
        split: String,
        /// Acceleration factor; repeatable, replaces eval.accelerations
        #[arg(long = "acc", value_name = "R")]
        accelerations: Vec<f64>,
        /// Directory for metrics.csv and summary.json
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Predict one scan's label volume and store it as a tensor container
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Scan id from the dataset manifest
        #[arg(long)]
        scan: String,
        /// Acceleration factor for the synthesized acquisition
        #[arg(long, default_value_t = 8.0)]
        acc: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render overlays, sampled k-space, and a zero-fill preview as PNGs
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scan: String,
        #[arg(long, default_value_t = 8.0)]
        acc: f64,
        /// Frame index within the cine loop
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::SynthData {
            out,
            config,
            overrides,
            force,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let manifest = kseg::dataset::write_dataset(&out, &cfg.data, force)?;
            println!(
                "wrote {} scans ({} train / {} val / {} test) to {}",
                manifest.scans.len(),
                manifest.split_entries(Split::Train).count(),
                manifest.split_entries(Split::Val).count(),
                manifest.split_entries(Split::Test).count(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            config,
            overrides,
            resume,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let summary = kseg::driver::run_train(&data, &out, resume.as_deref(), &cfg)?;
            println!(
                "trained to step {} (mean loss {:.6}); {} checkpoints in {}",
                summary.final_step,
                summary.mean_loss,
                summary.checkpoints.len(),
                out.display()
            );
            if let Some(d) = summary.best_val_dice {
                println!("best validation foreground Dice: {d:.4}");
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            accelerations,
            out,
            config,
            overrides,
        } => {
            let mut cfg = load_config(config.as_deref(), &overrides)?;
            let split_kind = Split::parse(&split).ok_or_else(|| {
                CmdError::Config(format!(
                    "unknown split {split:?}; expected train, val, or test"
                ))
            })?;
            if !accelerations.is_empty() {
                if let Some(bad) = accelerations.iter().find(|r| **r < 1.0 || r.is_nan()) {
                    return Err(CmdError::Config(format!(
                        "acceleration must be at least 1, got {bad}"
                    )));
                }
                cfg.eval.accelerations = accelerations;
            }
            let summary = kseg::evalrun::run_eval(&checkpoint, &data, split_kind, &split, &cfg, &out)?;
            for acc in &summary.per_acceleration {
                println!(
                    "R={:<3} over {} scans: fg Dice {:.4} ± {:.4}, fg HD max {:.2} ± {:.2}",
                    acc.r,
                    acc.scans,
                    acc.dice_fg_mean.mean,
                    acc.dice_fg_mean.std,
                    acc.hd_fg_max.mean,
                    acc.hd_fg_max.std
                );
            }
            println!("metrics written to {}", out.display());
            Ok(())
        }
        Command::Predict {
            checkpoint,
            data,
            scan,
            acc,
            out,
            config,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            if acc < 1.0 || acc.is_nan() {
                return Err(CmdError::Config(format!(
                    "acceleration must be at least 1, got {acc}"
                )));
            }
            let path = kseg::evalrun::run_predict(&checkpoint, &data, &scan, acc, &cfg, &out)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Render {
            checkpoint,
            data,
            scan,
            acc,
            frame,
            out,
            config,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let paths =
                kseg::render::run_render(&checkpoint, &data, &scan, acc, frame, &cfg, &out)?;
            for p in &paths {
                println!("wrote {}", p.display());
            }
            Ok(())
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

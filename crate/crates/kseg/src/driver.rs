//! The training command: wires a dataset and run config into the core
//! training loop, appending a CSV log and emitting a checkpoint series.
//!
//! Layout under the output directory:
//!
//! ```text
//! train_log.csv        append-only rows `step,loss,dice_val,wall_ms`;
//!                      step rows leave dice_val empty, eval rows leave loss
//!                      empty (row count = steps run + evaluations)
//! ckpt_<step>.zip      checkpoint at each cadence point (and step 0)
//! best.zip             copy of the checkpoint with the best validation Dice
//! ```
//!
//! Loss and Dice are printed with Rust's shortest-round-trip float
//! formatting, so two runs with the same seed produce byte-identical rows;
//! only `wall_ms` varies between reruns.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kseg_core::model::ModelConfig;
use kseg_core::train::{fit, FitObserver, StepOutcome, TrainState};

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, Split};
use crate::CmdError;

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.zip";

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt_{step:06}.zip")
}

#[derive(Debug)]
pub struct TrainSummary {
    pub final_step: usize,
    pub mean_loss: f64,
    pub best_val_dice: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
}

struct RunObserver<'a> {
    log: File,
    started: Instant,
    out_dir: &'a Path,
    model_cfg: &'a ModelConfig,
    checkpoints: Vec<PathBuf>,
    failure: Option<CmdError>,
}

impl RunObserver<'_> {
    fn wall_ms(&self) -> u128 {
        self.started.elapsed().as_millis()
    }

    fn append(&mut self, row: String) {
        if self.failure.is_some() {
            return;
        }
        if let Err(e) = self.log.write_all(row.as_bytes()) {
            self.failure = Some(CmdError::Data(format!("cannot append to training log: {e}")));
        }
    }
}

impl FitObserver for RunObserver<'_> {
    fn on_step(&mut self, step: usize, outcome: &StepOutcome) {
        let row = format!("{step},{},,{}\n", outcome.loss, self.wall_ms());
        self.append(row);
    }

    fn on_eval(&mut self, step: usize, dice: f64) {
        let row = format!("{step},,{dice},{}\n", self.wall_ms());
        self.append(row);
    }

    fn on_checkpoint(&mut self, step: usize, state: &TrainState, is_best: bool) {
        if self.failure.is_some() {
            return;
        }
        let path = self.out_dir.join(checkpoint_name(step));
        if let Err(e) = save_checkpoint(&path, state, self.model_cfg) {
            self.failure = Some(CmdError::Data(e.to_string()));
            return;
        }
        self.checkpoints.push(path.clone());
        if is_best {
            if let Err(e) = std::fs::copy(&path, self.out_dir.join(BEST_CHECKPOINT)) {
                self.failure = Some(CmdError::Data(format!(
                    "cannot update {BEST_CHECKPOINT}: {e}"
                )));
            }
        }
    }
}

pub fn run_train(
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    cfg: &RunConfig,
) -> Result<TrainSummary, CmdError> {
    let manifest = dataset::load_manifest(data_dir)?;
    let train_scans = dataset::load_split(data_dir, &manifest, Split::Train)?;
    let val_scans = dataset::load_split(data_dir, &manifest, Split::Val)?;
    if train_scans.is_empty() {
        return Err(CmdError::Data(format!(
            "dataset {} has no training scans",
            data_dir.display()
        )));
    }

    let model_cfg = cfg.model_config();
    let mut state = match resume {
        None => TrainState::new(&model_cfg, &cfg.train),
        Some(path) => {
            let (ckpt_cfg, state) = crate::checkpoint::load_checkpoint(path)?;
            if ckpt_cfg != model_cfg {
                return Err(CmdError::Config(format!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                )));
            }
            if state.seed != cfg.train.seed {
                return Err(CmdError::Config(format!(
                    "checkpoint {} carries seed {} but the config asks for {}",
                    path.display(),
                    state.seed,
                    cfg.train.seed
                )));
            }
            state
        }
    };

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let log_path = out_dir.join(LOG_FILE);
    let log_exists = log_path.exists();
    if log_exists && resume.is_none() {
        return Err(CmdError::Config(format!(
            "{} already holds a training log; pick a fresh directory or pass --resume",
            out_dir.display()
        )));
    }
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| CmdError::Data(format!("cannot open {}: {e}", log_path.display())))?;
    if !log_exists {
        log.write_all(b"step,loss,dice_val,wall_ms\n")
            .map_err(|e| CmdError::Data(format!("cannot write log header: {e}")))?;
    }

    let mut observer = RunObserver {
        log,
        started: Instant::now(),
        out_dir,
        model_cfg: &model_cfg,
        checkpoints: Vec::new(),
        failure: None,
    };
    let fit_result = fit(
        &mut state,
        &train_scans,
        &val_scans,
        &model_cfg,
        &cfg.train,
        &mut observer,
    );
    if let Some(e) = observer.failure {
        return Err(e);
    }
    fit_result?;

    Ok(TrainSummary {
        final_step: state.step,
        mean_loss: state.loss_stats.mean(),
        best_val_dice: state.best_val_dice,
        checkpoints: observer.checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load_config, PhantomGridConfig};
    use crate::dataset::write_dataset;

    fn tiny_run_config() -> RunConfig {
        let mut cfg = load_config(
            None,
            &[
                String::from("model.layers=1"),
                String::from("model.latents=4"),
                String::from("model.width=8"),
                String::from("model.ff_width=8"),
                String::from("model.heads=2"),
                String::from("encoding.num_frequencies=2"),
                String::from("train.steps=2"),
                String::from("train.queries_per_step=16"),
                String::from("train.checkpoint_every=1"),
            ],
        )
        .unwrap();
        cfg.data.num_train = 1;
        cfg.data.num_val = 1;
        cfg.data.num_test = 1;
        cfg.data.phantom = PhantomGridConfig { t: 2, h: 32, w: 32 };
        cfg
    }

    #[test]
    fn writes_the_log_and_checkpoint_series() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config();
        write_dataset(data.path(), &cfg.data, false).unwrap();

        let summary = run_train(data.path(), out.path(), None, &cfg).unwrap();
        assert_eq!(summary.final_step, 2);
        assert!(summary.best_val_dice.is_some());
        // Initial checkpoint plus one per cadence point.
        assert_eq!(summary.checkpoints.len(), 3);
        assert!(out.path().join("ckpt_000000.zip").exists());
        assert!(out.path().join("ckpt_000002.zip").exists());
        assert!(out.path().join(BEST_CHECKPOINT).exists());

        let log = std::fs::read_to_string(out.path().join(LOG_FILE)).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], "step,loss,dice_val,wall_ms");
        // Two step rows and two eval rows (cadence 1, steps 2).
        assert_eq!(lines.len(), 1 + 2 + 2);
        let step_row: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(step_row.len(), 4);
        assert!(step_row[1].parse::<f64>().unwrap().is_finite());
        assert!(step_row[2].is_empty());
    }

    #[test]
    fn refuses_to_clobber_an_existing_log_without_resume() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config();
        write_dataset(data.path(), &cfg.data, false).unwrap();
        run_train(data.path(), out.path(), None, &cfg).unwrap();
        assert!(matches!(
            run_train(data.path(), out.path(), None, &cfg),
            Err(CmdError::Config(_))
        ));
    }

    #[test]
    fn resume_rejects_a_mismatched_model_config() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config();
        write_dataset(data.path(), &cfg.data, false).unwrap();
        run_train(data.path(), out.path(), None, &cfg).unwrap();

        let mut wider = cfg.clone();
        wider.model.width = 16;
        let out2 = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_train(
                data.path(),
                out2.path(),
                Some(&out.path().join("ckpt_000002.zip")),
                &wider
            ),
            Err(CmdError::Config(_))
        ));
    }
}

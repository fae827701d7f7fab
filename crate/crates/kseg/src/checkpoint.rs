//! Checkpoints: a zip archive with deterministic member ordering so that
//! saving the same state twice yields identical bytes.
//!
//! Members, in the stored (lexicographic) order:
//!
//! ```text
//! adam_m.dskt          first-moment vector, flat over the packed params
//! adam_v.dskt          second-moment vector
//! manifest.json        {"config": <model config>, "step", "rng_seed"}
//! params/<name>.dskt   one tensor container per named parameter
//! train_state.json     optimizer counters, RNG word position, loss stats
//! ```
//!
//! Everything is stored uncompressed with a fixed timestamp; the f64 payloads
//! live in tensor containers, so a load/save cycle is bitwise transparent.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use kseg_core::model::{ModelConfig, Params};
use kseg_core::rng::rng_from_seed;
use kseg_core::tensor::Tensor;
use kseg_core::train::{AdamState, LossStats, TrainState};
use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::container::{self, ContainerError};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Zip {
        path: String,
        source: zip::result::ZipError,
    },
    #[error("checkpoint member {member}: {source}")]
    Json {
        member: String,
        source: serde_json::Error,
    },
    #[error("checkpoint member {member}: {source}")]
    Container {
        member: String,
        source: ContainerError,
    },
    #[error("{0}")]
    Corrupt(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    step: usize,
    rng_seed: u64,
}

/// Optimizer and stream state beyond what the manifest carries. The RNG word
/// position is a u128 split into two u64 halves to stay within JSON numbers.
#[derive(Debug, Serialize, Deserialize)]
struct PersistedTrainState {
    adam_t: u64,
    rng_word_pos_hi: u64,
    rng_word_pos_lo: u64,
    loss_count: u64,
    loss_sum: f64,
    loss_last: f64,
    best_val_dice: Option<f64>,
}

fn zip_err(path: &Path) -> impl FnOnce(zip::result::ZipError) -> CheckpointError + '_ {
    move |source| CheckpointError::Zip {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(
    path: &Path,
    state: &TrainState,
    cfg: &ModelConfig,
) -> Result<(), CheckpointError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut zip = ZipWriter::new(file);
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(zip::DateTime::default());

    let start = |zip: &mut ZipWriter<File>, name: &str| {
        zip.start_file(name, opts).map_err(zip_err(path))
    };

    let write_tensor = |zip: &mut ZipWriter<File>, member: &str, t: &Tensor| {
        container::write_tensor_to(zip, t).map_err(|source| match source {
            ContainerError::Io(e) => CheckpointError::Io {
                path: path.display().to_string(),
                source: e,
            },
            other => CheckpointError::Container {
                member: member.to_string(),
                source: other,
            },
        })
    };

    let n = state.params.param_count();
    let moment = |v: &[f64]| Tensor::new(vec![n], v.to_vec()).expect("flat moment vector");

    start(&mut zip, "adam_m.dskt")?;
    write_tensor(&mut zip, "adam_m.dskt", &moment(&state.adam.m))?;
    start(&mut zip, "adam_v.dskt")?;
    write_tensor(&mut zip, "adam_v.dskt", &moment(&state.adam.v))?;

    start(&mut zip, "manifest.json")?;
    let manifest = CheckpointManifest {
        config: cfg.clone(),
        step: state.step,
        rng_seed: state.seed,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|source| {
        CheckpointError::Json {
            member: String::from("manifest.json"),
            source,
        }
    })?;
    text.push('\n');
    zip.write_all(text.as_bytes()).map_err(io_err(path))?;

    let mut names: Vec<&str> = state.params.iter().map(|(name, _)| name).collect();
    names.sort_unstable();
    for name in names {
        let member = format!("params/{name}.dskt");
        start(&mut zip, &member)?;
        let tensor = state.params.get(name).expect("name from iter");
        write_tensor(&mut zip, &member, tensor)?;
    }

    start(&mut zip, "train_state.json")?;
    let word_pos = state.rng.get_word_pos();
    let persisted = PersistedTrainState {
        adam_t: state.adam.t,
        rng_word_pos_hi: (word_pos >> 64) as u64,
        rng_word_pos_lo: word_pos as u64,
        loss_count: state.loss_stats.count,
        loss_sum: state.loss_stats.sum,
        loss_last: state.loss_stats.last,
        best_val_dice: state.best_val_dice,
    };
    let mut text = serde_json::to_string_pretty(&persisted).map_err(|source| {
        CheckpointError::Json {
            member: String::from("train_state.json"),
            source,
        }
    })?;
    text.push('\n');
    zip.write_all(text.as_bytes()).map_err(io_err(path))?;

    zip.finish().map_err(zip_err(path))?;
    Ok(())
}

fn read_member_bytes(
    archive: &mut ZipArchive<File>,
    path: &Path,
    member: &str,
) -> Result<Vec<u8>, CheckpointError> {
    let mut file = archive.by_name(member).map_err(zip_err(path))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(io_err(path))?;
    Ok(buf)
}

fn read_member_tensor(
    archive: &mut ZipArchive<File>,
    path: &Path,
    member: &str,
) -> Result<Tensor, CheckpointError> {
    let bytes = read_member_bytes(archive, path, member)?;
    container::read_tensor_from(&mut bytes.as_slice()).map_err(|source| {
        CheckpointError::Container {
            member: member.to_string(),
            source,
        }
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, TrainState), CheckpointError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut archive = ZipArchive::new(file).map_err(zip_err(path))?;

    let parse_json = |member: &str, bytes: &[u8]| -> Result<serde_json::Value, CheckpointError> {
        serde_json::from_slice(bytes).map_err(|source| CheckpointError::Json {
            member: member.to_string(),
            source,
        })
    };
    let manifest_bytes = read_member_bytes(&mut archive, path, "manifest.json")?;
    let manifest: CheckpointManifest = serde_json::from_value(parse_json(
        "manifest.json",
        &manifest_bytes,
    )?)
    .map_err(|source| CheckpointError::Json {
        member: String::from("manifest.json"),
        source,
    })?;
    manifest
        .config
        .validate()
        .map_err(CheckpointError::Corrupt)?;

    let state_bytes = read_member_bytes(&mut archive, path, "train_state.json")?;
    let persisted: PersistedTrainState = serde_json::from_value(parse_json(
        "train_state.json",
        &state_bytes,
    )?)
    .map_err(|source| CheckpointError::Json {
        member: String::from("train_state.json"),
        source,
    })?;

    // Parameter tensors overwrite a placeholder initialization; every name
    // must be present with its expected shape.
    let mut params = Params::init(&manifest.config, &mut rng_from_seed(0));
    let names: Vec<String> = params.iter().map(|(name, _)| name.to_string()).collect();
    for name in &names {
        let member = format!("params/{name}.dskt");
        let tensor = read_member_tensor(&mut archive, path, &member)?;
        let slot = params.get_mut(name).expect("name from iter");
        if tensor.shape() != slot.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {name}: stored shape {:?} does not match the config's {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    let n = params.param_count();

    let adam_m = read_member_tensor(&mut archive, path, "adam_m.dskt")?;
    let adam_v = read_member_tensor(&mut archive, path, "adam_v.dskt")?;
    if adam_m.shape() != [n] || adam_v.shape() != [n] {
        return Err(CheckpointError::Corrupt(format!(
            "moment vectors {:?}/{:?} do not match the {n}-element parameter vector",
            adam_m.shape(),
            adam_v.shape()
        )));
    }

    let word_pos = ((persisted.rng_word_pos_hi as u128) << 64) | persisted.rng_word_pos_lo as u128;
    let state = TrainState {
        step: manifest.step,
        params,
        adam: AdamState {
            t: persisted.adam_t,
            m: adam_m.data().to_vec(),
            v: adam_v.data().to_vec(),
        },
        rng: TrainState::restore_rng(manifest.rng_seed, word_pos),
        seed: manifest.rng_seed,
        loss_stats: LossStats {
            count: persisted.loss_count,
            sum: persisted.loss_sum,
            last: persisted.loss_last,
        },
        best_val_dice: persisted.best_val_dice,
    };
    Ok((manifest.config, state))
}

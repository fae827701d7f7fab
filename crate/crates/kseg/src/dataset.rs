//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` (grid dims, base seed, and one
//! entry per scan with its id, generation seed, and split) plus a `scans/`
//! directory with three files per scan:
//!
//! ```text
//! scans/<id>.image.dskt    intensities, shape T×H×W
//! scans/<id>.labels.dskt   class indices 0–3 stored as f64, shape T×H×W
//! scans/<id>.json          sidecar {"scan_id", "T", "H", "W", "seed"}
//! ```
//!
//! All bytes are a pure function of the config, so regenerating a dataset
//! yields identical files.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use kseg_core::phantom::{generate_phantom, make_splits, PhantomScan};
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, PhantomGridConfig};
use crate::container::{self, ContainerError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Container {
        path: String,
        source: ContainerError,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{0} already contains a dataset; pass --force to replace it")]
    NotEmpty(String),
    #[error("no scan {0:?} in the manifest")]
    NoSuchScan(String),
    #[error("{0}")]
    Corrupt(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub phantom: PhantomGridConfig,
    pub base_seed: u64,
    pub scans: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.scans.iter().filter(move |e| e.split == split)
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry, DatasetError> {
        self.scans
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| DatasetError::NoSuchScan(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    scan_id: String,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    seed: u64,
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn scan_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    let scans = dir.join("scans");
    (
        scans.join(format!("{id}.image.dskt")),
        scans.join(format!("{id}.labels.dskt")),
        scans.join(format!("{id}.json")),
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DatasetError::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Generate every scan and write the dataset under `dir`. Refuses to touch a
/// directory that already holds a manifest unless `force` is set.
pub fn write_dataset(
    dir: &Path,
    cfg: &DataConfig,
    force: bool,
) -> Result<DatasetManifest, DatasetError> {
    if manifest_path(dir).exists() {
        if !force {
            return Err(DatasetError::NotEmpty(dir.display().to_string()));
        }
        fs::remove_file(manifest_path(dir)).map_err(|e| io_err(&manifest_path(dir), e))?;
        let scans_dir = dir.join("scans");
        if scans_dir.exists() {
            fs::remove_dir_all(&scans_dir).map_err(|e| io_err(&scans_dir, e))?;
        }
    }
    fs::create_dir_all(dir.join("scans")).map_err(|e| io_err(dir, e))?;

    let splits = make_splits(cfg.num_train, cfg.num_val, cfg.num_test, cfg.base_seed);
    let mut entries = Vec::new();
    let named = splits
        .train
        .iter()
        .map(|r| (r, Split::Train))
        .chain(splits.val.iter().map(|r| (r, Split::Val)))
        .chain(splits.test.iter().map(|r| (r, Split::Test)));
    let p = cfg.phantom;
    for (scan_ref, split) in named {
        let mut scan = generate_phantom(scan_ref.seed, p.t, p.h, p.w);
        scan.scan_id = scan_ref.id.clone();
        write_scan(dir, &scan)?;
        entries.push(ManifestEntry {
            id: scan_ref.id.clone(),
            seed: scan_ref.seed,
            split,
        });
    }
    let manifest = DatasetManifest {
        phantom: p,
        base_seed: cfg.base_seed,
        scans: entries,
    };
    write_json(&manifest_path(dir), &manifest)?;
    Ok(manifest)
}

fn write_scan(dir: &Path, scan: &PhantomScan) -> Result<(), DatasetError> {
    let (image_path, labels_path, sidecar_path) = scan_paths(dir, &scan.scan_id);
    let wrap = |path: &Path| {
        let path = path.display().to_string();
        move |source| DatasetError::Container { path, source }
    };
    container::write_tensor(&image_path, &scan.image).map_err(wrap(&image_path))?;
    container::write_tensor(&labels_path, &scan.labels).map_err(wrap(&labels_path))?;
    let sidecar = Sidecar {
        scan_id: scan.scan_id.clone(),
        t: scan.t(),
        h: scan.h(),
        w: scan.w(),
        seed: scan.seed,
    };
    write_json(&sidecar_path, &sidecar)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            DatasetError::Corrupt(format!(
                "{} is not a dataset directory (no manifest.json)",
                dir.display()
            ))
        } else {
            io_err(&path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Load one scan, cross-checking the sidecar and container shapes against
/// the manifest.
pub fn load_scan(
    dir: &Path,
    manifest: &DatasetManifest,
    id: &str,
) -> Result<PhantomScan, DatasetError> {
    let entry = manifest.entry(id)?;
    let (image_path, labels_path, sidecar_path) = scan_paths(dir, id);
    let image = container::read_tensor(&image_path).map_err(|source| DatasetError::Container {
        path: image_path.display().to_string(),
        source,
    })?;
    let labels = container::read_tensor(&labels_path).map_err(|source| DatasetError::Container {
        path: labels_path.display().to_string(),
        source,
    })?;
    let sidecar_text = fs::read_to_string(&sidecar_path).map_err(|e| io_err(&sidecar_path, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&sidecar_text).map_err(|source| DatasetError::Json {
            path: sidecar_path.display().to_string(),
            source,
        })?;

    if sidecar.scan_id != id || sidecar.seed != entry.seed {
        return Err(DatasetError::Corrupt(format!(
            "sidecar for {id} disagrees with the manifest"
        )));
    }
    let expected = [sidecar.t, sidecar.h, sidecar.w];
    if image.shape() != expected || labels.shape() != expected {
        return Err(DatasetError::Corrupt(format!(
            "scan {id}: container shapes {:?}/{:?} do not match sidecar {expected:?}",
            image.shape(),
            labels.shape()
        )));
    }
    if labels
        .data()
        .iter()
        .any(|&v| v.fract() != 0.0 || !(0.0..=3.0).contains(&v))
    {
        return Err(DatasetError::Corrupt(format!(
            "scan {id}: labels contain values outside the classes 0–3"
        )));
    }
    Ok(PhantomScan {
        image,
        labels,
        scan_id: sidecar.scan_id,
        seed: sidecar.seed,
    })
}

pub fn load_split(
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<PhantomScan>, DatasetError> {
    manifest
        .split_entries(split)
        .map(|e| load_scan(dir, manifest, &e.id))
        .collect()
}

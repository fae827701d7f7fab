//! Run configuration: one JSON file with sections `{data, model, encoding,
//! train, eval}`, every field defaulted, unknown keys rejected. A config is
//! resolved in three stages — defaults, then the file (deep-merged), then
//! `--override key.path=value` pairs — and validated before any work runs.

use std::fmt::Write as _;
use std::path::Path;

use kseg_core::encoding::EncodingConfig;
use kseg_core::model::ModelConfig;
use kseg_core::train::{TrainConfig, ACCELERATIONS, MAX_DECODE_CHUNK};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("override {0:?} is not of the form key.path=value")]
    BadOverride(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Phantom grid dimensions; serialized uppercase to match scan sidecars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomGridConfig {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
}

impl Default for PhantomGridConfig {
    fn default() -> Self {
        PhantomGridConfig { t: 10, h: 64, w: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_train: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub base_seed: u64,
    pub phantom: PhantomGridConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            num_train: 60,
            num_val: 20,
            num_test: 20,
            base_seed: 0,
            phantom: PhantomGridConfig::default(),
        }
    }
}

/// The model section carries everything except the encoding, which the spec
/// of the config file keeps as its own top-level section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub latents: usize,
    pub width: usize,
    pub ff_width: usize,
    pub heads: usize,
    pub classes: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            layers: m.layers,
            latents: m.latents,
            width: m.width,
            ff_width: m.ff_width,
            heads: m.heads,
            classes: m.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub accelerations: Vec<f64>,
    /// Decode batch size; clamped to the trainer's hard cap.
    pub chunk: usize,
    /// Base seed for evaluation-time acquisitions (B0 fields and masks).
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            accelerations: ACCELERATIONS.to_vec(),
            chunk: MAX_DECODE_CHUNK,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSection,
    pub encoding: EncodingConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Assemble the model configuration the core crate consumes.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.model.layers,
            latents: self.model.latents,
            width: self.model.width,
            ff_width: self.model.ff_width,
            heads: self.model.heads,
            classes: self.model.classes,
            encoding: self.encoding.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_config().validate().map_err(ConfigError::Invalid)?;
        self.train.validate().map_err(ConfigError::Invalid)?;
        let p = &self.data.phantom;
        if p.t < 2 {
            return Err(ConfigError::Invalid(format!(
                "phantom.T must be at least 2, got {}",
                p.t
            )));
        }
        if p.h < 32 || p.w < 32 {
            return Err(ConfigError::Invalid(format!(
                "phantom grid {}×{} is below the 32×32 minimum",
                p.h, p.w
            )));
        }
        if self.data.num_train == 0 {
            return Err(ConfigError::Invalid(String::from(
                "num_train must be positive",
            )));
        }
        if self.eval.chunk == 0 {
            return Err(ConfigError::Invalid(String::from("eval.chunk must be positive")));
        }
        for r in &self.eval.accelerations {
            if *r < 1.0 || r.is_nan() {
                return Err(ConfigError::Invalid(format!(
                    "eval acceleration {r} must be ≥ 1"
                )));
            }
        }
        Ok(())
    }
}

fn deep_merge(base: &mut Value, incoming: Value) {
    match (base, incoming) {
        (Value::Object(b), Value::Object(i)) => {
            for (k, v) in i {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        // Unknown section/key: keep it so deserialization
                        // reports it instead of silently dropping it.
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    // Paths may omit the "data" section (so `phantom.T=10` works); try the
    // literal path first, then the alias.
    let exists = |root: &Value, segs: &[&str]| -> bool {
        let mut cur = root;
        for s in segs {
            match cur.get(*s) {
                Some(next) => cur = next,
                None => return false,
            }
        }
        true
    };
    let mut resolved: Vec<&str> = segments.clone();
    if !exists(root, &resolved) {
        let mut aliased = vec!["data"];
        aliased.extend_from_slice(&segments);
        if exists(root, &aliased) {
            resolved = aliased;
        } else {
            return Err(ConfigError::UnknownKey(path.to_string()));
        }
    }
    let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut cur = root;
    for s in &resolved[..resolved.len() - 1] {
        cur = cur.get_mut(*s).expect("path verified above");
    }
    *cur.get_mut(resolved[resolved.len() - 1])
        .expect("path verified above") = value;
    Ok(())
}

/// Resolve a config: defaults ← file (if any) ← overrides, then validate.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut root = serde_json::to_value(RunConfig::default())?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
            path: p.display().to_string(),
            source,
        })?;
        deep_merge(&mut root, serde_json::from_str(&text)?);
    }
    for spec in overrides {
        apply_override(&mut root, spec)?;
    }
    let cfg: RunConfig = serde_json::from_value(root)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Every flattened config key with its default value, for `--help`.
pub fn config_keys_help() -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let path = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&path, child, out);
                }
            }
            leaf => {
                let _ = writeln!(out, "  {prefix} = {leaf}");
            }
        }
    }
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut out = String::from(
        "Configuration keys (JSON config sections and --override paths), with defaults:\n",
    );
    walk("", &defaults, &mut out);
    out.push_str("\nOverrides take key.path=value; the data. prefix may be omitted.");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn partial_file_merges_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"steps": 7}, "model": {"width": 16, "heads": 2}}"#)
            .unwrap();
        let cfg = load_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.model.width, 16);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.data.num_train, 60);
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"step_count": 7}}"#).unwrap();
        assert!(matches!(
            load_config(Some(&path), &[]),
            Err(ConfigError::Json(_))
        ));
    }

    #[test]
    fn overrides_resolve_with_and_without_data_prefix() {
        let cfg = load_config(
            None,
            &[
                String::from("phantom.T=4"),
                String::from("data.num_val=2"),
                String::from("train.learning_rate=0.001"),
            ],
        )
        .unwrap();
        assert_eq!(cfg.data.phantom.t, 4);
        assert_eq!(cfg.data.num_val, 2);
        assert_eq!(cfg.train.learning_rate, 1e-3);
    }

    #[test]
    fn unknown_override_key_fails_before_work() {
        assert!(matches!(
            load_config(None, &[String::from("train.speed=9")]),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            load_config(None, &[String::from("nothing")]),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(matches!(
            load_config(None, &[String::from("train.acceleration=5")]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            load_config(None, &[String::from("phantom.H=8")]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            load_config(None, &[String::from("model.width=30")]),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn help_lists_every_flattened_key() {
        let help = config_keys_help();
        for key in [
            "data.num_train = 60",
            "data.phantom.T = 10",
            "model.width = 128",
            "encoding.num_frequencies = 10",
            "train.learning_rate = 0.0001",
            "train.loss.dice = 1.0",
            "train.b0.bumps = 3",
            "eval.chunk = 8192",
        ] {
            assert!(help.contains(key), "help is missing {key:?}:\n{help}");
        }
    }

    #[test]
    fn model_section_assembles_the_core_config() {
        let cfg = load_config(None, &[String::from("model.latents=32")]).unwrap();
        let m = cfg.model_config();
        assert_eq!(m.latents, 32);
        assert_eq!(m.encoding, cfg.encoding);
    }
}

//! Config resolution: defaults < JSON file < `--override key=value`.
//! Unknown keys are hard errors so typos cannot silently fall back to
//! defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fine_imitate_core::data::DatasetSpec;
use fine_imitate_core::detector::DetectorConfig;
use fine_imitate_core::trainer::TrainConfig;

/// Top-level config file for training-family commands.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    /// When set, distillation commands derive the student architecture from
    /// the teacher checkpoint via this width multiplier instead of using
    /// `detector` directly.
    pub student_width: Option<f64>,
}

/// Read a JSON file (or start from `{}` when `path` is `None`), apply
/// dotted-path overrides, then parse into `T` with unknown keys rejected.
pub fn resolve<T: serde::de::DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    serde_json::from_value(value.clone()).with_context(|| format!("resolving config {value}"))
}

/// Set `value` at a dotted path like `train.lr=0.1`. The right-hand side is
/// parsed as JSON when possible, else taken as a string.
fn apply_override(root: &mut serde_json::Value, entry: &str) -> Result<()> {
    let Some((path, raw)) = entry.split_once('=') else {
        bail!("override {entry:?} is not of the form key=value");
    };
    let parsed: serde_json::Value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            bail!("override path {path:?} descends through a non-object at {part:?}");
        }
        let map = cursor.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop always returns on the last part")
}

pub fn load_app_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<AppConfig> {
    let mut overrides = overrides.to_vec();
    if let Some(s) = seed {
        overrides.push(format!("train.seed={s}"));
    }
    let cfg: AppConfig = resolve(path, &overrides)?;
    cfg.detector.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn load_dataset_spec(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<DatasetSpec> {
    let mut overrides = overrides.to_vec();
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let spec: DatasetSpec = resolve(path, &overrides)?;
    spec.validate()?;
    Ok(spec)
}

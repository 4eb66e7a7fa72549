use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// One named parameter in a checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned JSON container for named parameters. JSON floats are written
/// with shortest round-trip formatting, so save/load is lossless for the
/// finite values the numeric core allows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Extra metadata the owner wants to carry (e.g. the detector config).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            meta,
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: &Tensor) {
        self.params.insert(
            name.to_string(),
            TensorData {
                dims: tensor.dims().to_vec(),
                values: tensor.data().to_vec(),
            },
        );
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let entry = self
            .params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))?;
        Tensor::from_vec(entry.dims.clone(), entry.values.clone())
    }

    /// Drop every parameter under `prefix` (e.g. the adaptation-layer
    /// namespace when exporting a student for inference).
    pub fn strip_namespace(&mut self, prefix: &str) {
        self.params.retain(|k, _| !k.starts_with(prefix));
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.format_version
        )));
    }
    Ok(ckpt)
}

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::Serialize;

/// One manifest per run, written into the output directory. Timestamps live
/// here and only here so every other artifact is byte-reproducible.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub resolved_config: serde_json::Value,
    pub started_at_epoch_s: u64,
    pub finished_at_epoch_s: u64,
}

fn now_epoch_s() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct ManifestWriter {
    manifest: RunManifest,
}

impl ManifestWriter {
    pub fn start(command: &str, seeds: Vec<u64>, out_dir: &Path, resolved_config: serde_json::Value) -> ManifestWriter {
        ManifestWriter {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seeds,
                out_dir: out_dir.display().to_string(),
                resolved_config,
                started_at_epoch_s: now_epoch_s(),
                finished_at_epoch_s: 0,
            },
        }
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<()> {
        self.manifest.finished_at_epoch_s = now_epoch_s();
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}

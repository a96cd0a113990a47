use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Serialize)]
pub struct Timings {
    pub load_seconds: f64,
    pub train_seconds: f64,
    pub save_seconds: f64,
    pub total_seconds: f64,
}

/// Everything needed to rerun a training run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: &'static str,
    /// Seconds since the Unix epoch when the run started.
    pub started_at: u64,
    pub dataset: PathBuf,
    pub embeddings: PathBuf,
    pub epoch_log: PathBuf,
    pub config: RunConfig,
    pub entities: usize,
    pub relations: usize,
    pub train_triples: usize,
    pub final_loss: f64,
    pub timings: Timings,
}

/// First 12 hex digits of the SHA-256 of the resolved config, dataset path
/// and start time.
pub fn run_id(config: &RunConfig, dataset: &Path, started_at: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    hasher.update(dataset.to_string_lossy().as_bytes());
    hasher.update(started_at.to_le_bytes());
    let digest = format!("{:x}", hasher.finalize());
    digest[..12].to_owned()
}

impl RunManifest {
    /// Writes `manifest.json` and a `config.txt` that `--config` accepts.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.config.to_config_file())
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

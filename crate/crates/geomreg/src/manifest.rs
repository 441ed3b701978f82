//! Run manifests: the resolved configuration and output layout of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_DIR: &str = "results";
pub const MODELS_DIR: &str = "models";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    /// Every setting with defaults filled, in the command's own schema.
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, threads: usize, config: serde_json::Value, outputs: Vec<String>) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads,
            config,
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            outputs,
            notes: Vec::new(),
        }
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        write_json(&run_dir.join(MANIFEST_FILE), self)
    }

    pub fn finish(&mut self, run_dir: &Path, status: &str) -> Result<()> {
        self.finished_at = Some(now());
        self.status = status.into();
        self.write(run_dir)
    }

    /// Accepts either a manifest file or the run directory holding one.
    pub fn read(path: &Path) -> Result<Self> {
        let file: PathBuf = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        read_json(&file)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

//! The record every command leaves next to its outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::formats::{sha256_file, write_json};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub version: String,
    /// The only field allowed to differ between identical runs.
    pub wall_clock_secs: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    command: String,
    argv: Vec<String>,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: &[String], seed: u64) -> Self {
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            config: serde_json::Value::Null,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).expect("serializable config");
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.into());
    }

    /// Hashes everything recorded and writes `manifest.json` into `dir`.
    pub fn finish(self, dir: &Path) -> Result<RunManifest> {
        let record = |p: &PathBuf| -> Result<FileRecord> { Ok(FileRecord { path: p.display().to_string(), sha256: sha256_file(p)? }) };
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs.iter().map(record).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(record).collect::<Result<_>>()?,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

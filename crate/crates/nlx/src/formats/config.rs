//! Stage configuration files (TOML or JSON) and the JSONL loss log.

use std::fs;
use std::path::Path;

use nlx_core::training::{LossRecord, StageConfig, StageKind};
use serde::{Deserialize, Serialize};

use super::dataset::write_jsonl;
use crate::{io_err, NlxError, Result};

/// Model widths used when a stage builds a fresh model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub patch: usize,
    pub vision_dim: usize,
    pub vision_layers: usize,
    pub vision_heads: usize,
    pub vision_ff_dim: usize,
    pub summary_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            layers: 2,
            heads: 4,
            ff_dim: 64,
            patch: 8,
            vision_dim: 32,
            vision_layers: 1,
            vision_heads: 4,
            vision_ff_dim: 64,
            summary_dim: 32,
        }
    }
}

/// A stage config file: the stage fields at top level and an optional `[model]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub stage: StageConfig,
    #[serde(default)]
    pub model: ModelSpec,
}

impl RunConfig {
    pub fn desk(stage: StageKind) -> Self {
        Self { stage: StageConfig::desk(stage), model: ModelSpec::default() }
    }
}

/// Reads `.json` as JSON and anything else as TOML.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| NlxError::Parse { path: path.into(), line: e.line(), message: e.to_string() })?
    } else {
        toml::from_str(&text).map_err(|e| NlxError::Format { path: path.into(), message: e.to_string() })?
    };
    cfg.stage.validate()?;
    Ok(cfg)
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    write_jsonl(path, records)
}

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use nlx_core::data::{NleExample, PredictionRecord};
use nlx_core::model::TaskCaps;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::write_bytes;
use crate::{io_err, NlxError, Result};

/// One value per non-blank line. An empty file is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| NlxError::Parse { path: path.into(), line: i + 1, message: e.to_string() })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(NlxError::Format { path: path.into(), message: "empty file".into() });
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("serializable value"));
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

/// Directory image references are resolved against.
pub fn dataset_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn resolve_image(dataset: &Path, image: &str) -> PathBuf {
    dataset_root(dataset).join(image)
}

/// Parses, validates and checks image references line by line. `has_image`
/// decides whether a reference resolves; by default the file must exist.
pub fn load_dataset_with(path: &Path, caps: &TaskCaps, has_image: &dyn Fn(&str) -> bool) -> Result<Vec<NleExample>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| NlxError::Parse { path: path.into(), line: i + 1, message };
        let e: NleExample = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        e.validate(caps).map_err(|err| at(err.to_string()))?;
        if !ids.insert(e.id.clone()) {
            return Err(at(format!("duplicate id {}", e.id)));
        }
        if !has_image(&e.image) {
            return Err(at(format!("missing image {}", e.image)));
        }
        out.push(e);
    }
    if out.is_empty() {
        return Err(NlxError::Format { path: path.into(), message: "empty file".into() });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, caps: &TaskCaps) -> Result<Vec<NleExample>> {
    let root = dataset_root(path);
    load_dataset_with(path, caps, &|image| root.join(image).is_file())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(path)
}

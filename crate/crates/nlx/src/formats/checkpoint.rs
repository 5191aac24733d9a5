//! Binary checkpoints: magic, version, a JSON header naming every array, then
//! the arrays as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use nlx_core::evalframeworks::{ClassifierConfig, ExplainPredictClassifier};
use nlx_core::model::{NlxConfig, NlxModel};
use nlx_core::numerics::{ParameterStore, Tensor};
use nlx_core::tokenizer::{VocabFile, Vocabulary};
use serde::{Deserialize, Serialize};

use super::write_bytes;
use crate::{io_err, NlxError, Result};

pub const MAGIC: &[u8; 8] = b"NLXCKPT\0";
pub const VERSION: u32 = 1;
pub const MODEL_KIND: &str = "nlx-model";
pub const CLASSIFIER_KIND: &str = "explain-predict";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub vocab: VocabFile,
    /// Concept names for models, answer list for classifiers.
    pub labels: Vec<String>,
    pub arrays: Vec<ArrayEntry>,
}

pub fn encode_checkpoint(
    kind: &str,
    config: &impl Serialize,
    vocab: &Vocabulary,
    labels: &[String],
    store: &ParameterStore,
) -> Vec<u8> {
    let header = CheckpointHeader {
        version: VERSION,
        kind: kind.into(),
        config: serde_json::to_value(config).expect("serializable config"),
        vocab: vocab.to_file(),
        labels: labels.to_vec(),
        arrays: store.iter().map(|(_, p)| ArrayEntry { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("serializable header");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ParameterStore), String> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format!("checkpoint version {version}, expected {VERSION}"));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + len).ok_or("truncated header")?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| format!("header: {e}"))?;
    if header.version != VERSION {
        return Err(format!("header version {}, expected {VERSION}", header.version));
    }
    let mut store = ParameterStore::new();
    let mut at = 20 + len;
    for a in &header.arrays {
        let n: usize = a.shape.iter().product();
        let raw = bytes.get(at..at + 4 * n).ok_or_else(|| format!("array {} is truncated", a.name))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        let t = Tensor::new(a.shape.clone(), data).map_err(|e| format!("{}: {e}", a.name))?;
        store.add(&a.name, t).map_err(|e| format!("{}: {e}", a.name))?;
        at += 4 * n;
    }
    if at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - at));
    }
    Ok((header, store))
}

fn read_checkpoint(path: &Path, kind: &str) -> Result<(CheckpointHeader, ParameterStore)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |message: String| NlxError::Format { path: path.into(), message };
    let (header, store) = decode_checkpoint(&bytes).map_err(bad)?;
    if header.kind != kind {
        return Err(bad(format!("checkpoint holds {:?}, expected {kind:?}", header.kind)));
    }
    Ok((header, store))
}

/// A decoder model with the vocabulary and concept names it was trained with.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub model: NlxModel,
    pub vocab: Vocabulary,
    pub concepts: Vec<String>,
}

pub fn save_model(path: &Path, ck: &ModelCheckpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(MODEL_KIND, ck.model.config(), &ck.vocab, &ck.concepts, &ck.model.params))
}

/// Loads a model, checking every array's shape against the stored config.
pub fn load_model(path: &Path) -> Result<ModelCheckpoint> {
    let (header, store) = read_checkpoint(path, MODEL_KIND)?;
    let bad = |message: String| NlxError::Format { path: path.into(), message };
    let config: NlxConfig = serde_json::from_value(header.config).map_err(|e| bad(format!("config: {e}")))?;
    let vocab = Vocabulary::from_file(&header.vocab)?;
    if vocab.len() != config.vocab_size || header.labels.len() != config.num_concepts {
        return Err(bad(format!(
            "vocabulary of {} and {} concepts do not match config ({} / {})",
            vocab.len(),
            header.labels.len(),
            config.vocab_size,
            config.num_concepts
        )));
    }
    let model = NlxModel::from_parts(config, &store)?;
    Ok(ModelCheckpoint { model, vocab, concepts: header.labels })
}

pub fn save_classifier(path: &Path, clf: &ExplainPredictClassifier) -> Result<()> {
    write_bytes(path, &encode_checkpoint(CLASSIFIER_KIND, &clf.config, clf.vocab(), clf.answers(), &clf.params))
}

pub fn load_classifier(path: &Path) -> Result<ExplainPredictClassifier> {
    let (header, store) = read_checkpoint(path, CLASSIFIER_KIND)?;
    let config: ClassifierConfig = serde_json::from_value(header.config)
        .map_err(|e| NlxError::Format { path: path.into(), message: format!("config: {e}") })?;
    let vocab = Vocabulary::from_file(&header.vocab)?;
    Ok(ExplainPredictClassifier::from_parts(config, vocab, header.labels, &store)?)
}

//! Greedy generation, answer-conditioned explanation and cross-attention maps.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, NlxModel, Visual};
use crate::numerics::Tape;
use crate::tokenizer::{parse_generation, Segment, Sequence, TokenizerError, Vocabulary};
use crate::vision::GridFeatures;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodingError {
    #[error("answer to condition on is empty")]
    EmptyAnswer,
    #[error("forced prefix of {len} tokens does not fit the cap of {cap}")]
    OverCap { len: usize, cap: usize },
    #[error("prompt must end with <bos>")]
    MissingBos,
    #[error("{what} index {index} out of range ({len})")]
    OutOfRange { what: &'static str, index: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// Head-by-patch cross-attention of one layer for the newest position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAttention {
    pub heads: usize,
    /// `heads × Y`, row-major.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Tokens after `<bos>`, forced ones included.
    pub token_ids: Vec<usize>,
    /// How many leading `token_ids` were force-fed rather than predicted.
    pub forced: usize,
    pub answer: String,
    pub explanation: String,
    pub parsed: bool,
    /// Patch grid `(rows, cols)` the attention rows refer to.
    pub grid: (usize, usize),
    /// One entry per predicted token, each holding every layer.
    pub attention: Vec<Vec<LayerAttention>>,
}

impl GenerationResult {
    /// Steps whose token belongs to the answer (before the delimiter).
    pub fn answer_steps(&self, vocab: &Vocabulary) -> Vec<usize> {
        let delimiter = vocab.delimiter().ok();
        let eos = vocab.eos();
        let mut steps = Vec::new();
        for (step, &t) in self.token_ids[self.forced..].iter().enumerate() {
            if Some(t) == delimiter || t == eos {
                break;
            }
            steps.push(step);
        }
        steps
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn decode_from(
    model: &NlxModel,
    vocab: &Vocabulary,
    mut seq: Sequence,
    features: &GridFeatures,
    forced: &[(usize, Segment)],
    cap: usize,
) -> Result<GenerationResult, DecodingError> {
    if seq.token_ids.last() != Some(&vocab.bos()) {
        return Err(DecodingError::MissingBos);
    }
    if forced.len() > cap {
        return Err(DecodingError::OverCap { len: forced.len(), cap });
    }
    let noj = vocab.noj();
    let delimiter = vocab.delimiter()?;
    let mut segment = Segment::Ans;
    let mut generated = Vec::new();
    for &(t, s) in forced {
        seq.push(t, s, false, noj);
        generated.push(t);
        segment = s;
    }
    let mut attention = Vec::new();
    let max_positions = model.config().max_positions;
    while generated.len() < cap && seq.len() < max_positions {
        let mut tape = Tape::new();
        let memory = model.visual(&mut tape, Visual::Features(features))?;
        let out = model.forward(&mut tape, &seq, memory)?;
        let (l, v) = tape.dims(out.logits);
        let row = &tape.value(out.logits)[(l - 1) * v..l * v];
        let next = argmax_lowest(row);
        let mut layers = Vec::with_capacity(out.cross_attention.len());
        for &node in &out.cross_attention {
            let (probs, heads) = tape.attention_probs(node).expect("cross-attention node");
            let y = features.num_patches();
            let mut weights = Vec::with_capacity(heads * y);
            for h in 0..heads {
                let start = (h * l + (l - 1)) * y;
                weights.extend_from_slice(&probs[start..start + y]);
            }
            layers.push(LayerAttention { heads, weights });
        }
        attention.push(layers);
        generated.push(next);
        if next == vocab.eos() {
            break;
        }
        if next == delimiter {
            segment = Segment::Exp;
        }
        seq.push(next, segment, false, noj);
    }
    let parsed = parse_generation(vocab, &generated)?;
    Ok(GenerationResult {
        token_ids: generated,
        forced: forced.len(),
        answer: parsed.answer,
        explanation: parsed.explanation,
        parsed: parsed.parsed,
        grid: features.grid(),
        attention,
    })
}

/// Greedy decoding after `prompt` (which ends in `<bos>`), stopping at `<eos>`
/// or after `cap` tokens. Ties go to the lowest token id.
pub fn generate_greedy(
    model: &NlxModel,
    vocab: &Vocabulary,
    prompt: &Sequence,
    features: &GridFeatures,
    cap: usize,
) -> Result<GenerationResult, DecodingError> {
    decode_from(model, vocab, prompt.clone(), features, &[], cap)
}

/// Force-feeds `answer` and the delimiter after `<bos>`, then decodes only the
/// explanation. `cap` counts the forced tokens too.
pub fn generate_conditioned(
    model: &NlxModel,
    vocab: &Vocabulary,
    prompt: &Sequence,
    answer: &str,
    features: &GridFeatures,
    cap: usize,
) -> Result<GenerationResult, DecodingError> {
    let ids = vocab.encode(answer);
    if ids.is_empty() {
        return Err(DecodingError::EmptyAnswer);
    }
    let mut forced: Vec<(usize, Segment)> = ids.into_iter().map(|t| (t, Segment::Ans)).collect();
    forced.push((vocab.delimiter()?, Segment::Exp));
    if forced.len() >= cap {
        return Err(DecodingError::OverCap { len: forced.len(), cap });
    }
    decode_from(model, vocab, prompt.clone(), features, &forced, cap)
}

/// Head-averaged cross-attention of predicted token `step` in `layer`, laid
/// out on the patch grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, non-negative, sums to 1.
    pub values: Vec<f64>,
}

impl AttentionGrid {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Index of the largest cell, ties to the first.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.values)
    }
}

pub fn extract_attention_map(result: &GenerationResult, step: usize, layer: usize) -> Result<AttentionGrid, DecodingError> {
    let layers = result.attention.get(step).ok_or(DecodingError::OutOfRange {
        what: "step",
        index: step,
        len: result.attention.len(),
    })?;
    let la = layers.get(layer).ok_or(DecodingError::OutOfRange { what: "layer", index: layer, len: layers.len() })?;
    let (rows, cols) = result.grid;
    let y = rows * cols;
    let mut values = alloc::vec![0.0; y];
    for h in 0..la.heads {
        for (v, w) in values.iter_mut().zip(&la.weights[h * y..(h + 1) * y]) {
            *v += w;
        }
    }
    values.iter_mut().for_each(|v| *v /= la.heads as f64);
    Ok(AttentionGrid { rows, cols, values })
}

/// One map per generated answer token.
pub fn answer_attention_maps(
    result: &GenerationResult,
    vocab: &Vocabulary,
    layer: usize,
) -> Result<Vec<AttentionGrid>, DecodingError> {
    result.answer_steps(vocab).into_iter().map(|s| extract_attention_map(result, s, layer)).collect()
}

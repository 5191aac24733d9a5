//! Explain-predict scoring and the retrieval attack.

mod attack;
mod explain_predict;
mod retrieval;

use alloc::string::String;
use alloc::vec::Vec;

pub use attack::{attack_suite, plan_attack, score_attack, AttackPlan, AttackQuery, AttackReport, Axis, PlannedQuery, QueryScore};
pub use explain_predict::{
    explain_predict_accuracy, ground_truth_predictions, known_words, uses_soft_targets, ClassifierConfig,
    ExplainPredictClassifier, ExplainPredictReport,
};
pub use retrieval::{intra_distance, s_avg, Hit, Normalization, RetrievalIndex};

use crate::decoding::DecodingError;
use crate::metrics::TokenEmbedder;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::tokenizer::tokenize;
use crate::training::TrainingError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalFrameworkError {
    #[error("no training answers to classify into")]
    EmptyAnswerVocabulary,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("duplicate gallery id {0}")]
    DuplicateId(String),
    #[error("zero-norm vector for {0}")]
    ZeroNorm(String),
    #[error("vector of width {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("asked for {k} items, {available} available")]
    NotEnoughItems { k: usize, available: usize },
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("no prediction for {0}")]
    MissingPrediction(String),
    #[error("bad classifier checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown axis {0:?}, expected text or image")]
    UnknownAxis(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decoding(#[from] DecodingError),
}

/// Maps a whole text to one vector.
pub trait SentenceEncoder {
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// Mean of per-token vectors from any token embedder.
pub struct MeanPooled<'a>(pub &'a dyn TokenEmbedder);

impl SentenceEncoder for MeanPooled<'_> {
    fn encode(&self, text: &str) -> Vec<f64> {
        let rows = self.0.embed_tokens(&tokenize(text));
        let Some(first) = rows.first() else {
            return Vec::new();
        };
        let mut out = alloc::vec![0.0; first.len()];
        for r in &rows {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows.len() as f64);
        out
    }
}

/// Indicator of which concept words occur in `text`. Puts questions and
/// detector outputs in one retrieval space.
pub fn concept_indicator(text: &str, concepts: &[String]) -> Vec<f64> {
    let words = tokenize(text);
    concepts.iter().map(|c| if words.iter().any(|w| w == c) { 1.0 } else { 0.0 }).collect()
}

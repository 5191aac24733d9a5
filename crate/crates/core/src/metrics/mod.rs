//! Generation metrics, answer accuracy, concept accuracy and the filtered and
//! unfiltered evaluation driver. All text is tokenized with
//! [`crate::tokenizer::tokenize`].

mod bleu;
mod cider;
mod embed;
mod eval;
mod ngram;
mod rouge;

use alloc::string::String;
use alloc::vec::Vec;

pub use bleu::bleu;
pub use cider::{cider, CiderScore, CIDER_MAX_N, CIDER_SCALE};
pub use embed::{embed_sim_score, EmbeddingTable, SimScore, TokenEmbedder};
pub use eval::{
    concept_accuracy_at_k, evaluate_nle, task_accuracy, AnswerRule, EvalMode, EvalReport, SampleVerdict, TaskAccuracy,
    SIMILARITY_THRESHOLD,
};
pub use rouge::{rouge_l, ROUGE_BETA};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    Mismatch { hypotheses: usize, references: usize },
    #[error("a hypothesis has no references")]
    NoReferences,
    #[error("example {0} has no reference explanation")]
    NoReferencesFor(String),
    #[error("prediction for unknown example {0}")]
    UnknownId(String),
    #[error("two predictions for example {0}")]
    DuplicatePrediction(String),
    #[error("no predictions for examples {0:?}")]
    MissingPredictions(Vec<String>),
    #[error("expected {expected} predicted concepts, got {got}")]
    WrongK { expected: usize, got: usize },
    #[error("predicted concepts contain duplicates")]
    DuplicateConcepts,
}

#[cfg(test)]
mod tests;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{bleu, cider, embed_sim_score, rouge_l, MetricsError, TokenEmbedder};
use crate::data::{NleExample, PredictionRecord};
use crate::tokenizer::{normalize, tokenize};

/// Threshold of the similarity answer rule; a score equal to it counts as correct.
pub const SIMILARITY_THRESHOLD: f64 = 0.92;

/// How a predicted answer is judged against the ground-truth answer set.
#[derive(Clone, Copy)]
pub enum AnswerRule<'a> {
    /// Normalized text equals one of the ground-truth answers.
    SetMembership,
    /// Best embedding-similarity F1 against the ground-truth answers is at least `threshold`.
    Similarity { threshold: f64, encoder: &'a dyn TokenEmbedder },
}

impl AnswerRule<'_> {
    pub fn is_correct(&self, answer: &str, truth: &[String]) -> bool {
        match self {
            AnswerRule::SetMembership => {
                let a = normalize(answer);
                truth.iter().any(|t| normalize(t) == a)
            }
            AnswerRule::Similarity { threshold, encoder } => {
                let h = tokenize(answer);
                truth.iter().any(|t| embed_sim_score(&h, &tokenize(t), *encoder).f1 >= *threshold)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub accuracy: f64,
    /// `(example id, correct)` in dataset order.
    pub verdicts: Vec<(String, bool)>,
}

fn index_predictions<'p>(
    predictions: &'p [PredictionRecord],
    dataset: &[NleExample],
) -> Result<BTreeMap<&'p str, &'p PredictionRecord>, MetricsError> {
    let ids: BTreeSet<&str> = dataset.iter().map(|e| e.id.as_str()).collect();
    let mut by_id = BTreeMap::new();
    for p in predictions {
        if !ids.contains(p.id.as_str()) {
            return Err(MetricsError::UnknownId(p.id.clone()));
        }
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.id.clone()));
        }
    }
    let missing: Vec<String> = dataset.iter().filter(|e| !by_id.contains_key(e.id.as_str())).map(|e| e.id.clone()).collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions(missing));
    }
    Ok(by_id)
}

/// Per-example answer verdicts and their mean. Every prediction must name a
/// dataset example and every example needs a prediction.
pub fn task_accuracy(
    predictions: &[PredictionRecord],
    dataset: &[NleExample],
    rule: AnswerRule<'_>,
) -> Result<TaskAccuracy, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let by_id = index_predictions(predictions, dataset)?;
    let verdicts: Vec<(String, bool)> = dataset
        .iter()
        .map(|e| (e.id.clone(), rule.is_correct(&by_id[e.id.as_str()].answer, &e.answers)))
        .collect();
    let correct = verdicts.iter().filter(|v| v.1).count();
    Ok(TaskAccuracy { accuracy: correct as f64 / verdicts.len() as f64, verdicts })
}

/// Mean over samples of `|PR ∩ GT| / K`.
pub fn concept_accuracy_at_k(predicted: &[Vec<usize>], truth: &[Vec<usize>], k: usize) -> Result<f64, MetricsError> {
    if predicted.is_empty() || k == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    if predicted.len() != truth.len() {
        return Err(MetricsError::Mismatch { hypotheses: predicted.len(), references: truth.len() });
    }
    let mut total = 0.0;
    for (pr, gt) in predicted.iter().zip(truth) {
        if pr.len() != k {
            return Err(MetricsError::WrongK { expected: k, got: pr.len() });
        }
        let set: BTreeSet<usize> = pr.iter().copied().collect();
        if set.len() != pr.len() {
            return Err(MetricsError::DuplicateConcepts);
        }
        let gt: BTreeSet<usize> = gt.iter().copied().collect();
        total += set.intersection(&gt).count() as f64 / k as f64;
    }
    Ok(total / predicted.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Score every sample.
    Unfiltered,
    /// Score only samples whose answer is correct.
    Filtered,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub id: String,
    pub correct: bool,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub n_total: usize,
    pub n_kept: usize,
    pub task_accuracy: f64,
    pub bleu_1: Option<f64>,
    pub bleu_2: Option<f64>,
    pub bleu_3: Option<f64>,
    pub bleu_4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub cider: Option<f64>,
    pub cider_idf_fingerprint: Option<String>,
    pub cider_degenerate: bool,
    pub embed_sim: Option<f64>,
    /// Not computed; kept so reports line up with full-scale evaluation tables.
    pub meteor: Option<f64>,
    pub spice: Option<f64>,
    pub unparsed: usize,
    pub verdicts: Vec<SampleVerdict>,
}

/// Explanation scores over all samples or only the correctly answered ones.
/// An empty filtered set gives null scores rather than an error.
pub fn evaluate_nle(
    predictions: &[PredictionRecord],
    dataset: &[NleExample],
    mode: EvalMode,
    rule: AnswerRule<'_>,
    encoder: Option<&dyn TokenEmbedder>,
) -> Result<EvalReport, MetricsError> {
    if let Some(e) = dataset.iter().find(|e| e.explanations.is_empty()) {
        return Err(MetricsError::NoReferencesFor(e.id.clone()));
    }
    let acc = task_accuracy(predictions, dataset, rule)?;
    let by_id = index_predictions(predictions, dataset)?;
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut verdicts = Vec::with_capacity(dataset.len());
    let mut unparsed = 0;
    for (e, (_, correct)) in dataset.iter().zip(&acc.verdicts) {
        let p = by_id[e.id.as_str()];
        let kept = match mode {
            EvalMode::Unfiltered => true,
            EvalMode::Filtered => *correct,
        };
        if kept {
            hyps.push(tokenize(&p.explanation));
            refs.push(e.explanations.iter().map(|r| tokenize(r)).collect::<Vec<_>>());
            unparsed += usize::from(!p.parsed);
        }
        verdicts.push(SampleVerdict { id: e.id.clone(), correct: *correct, kept });
    }
    let mut report = EvalReport {
        mode,
        n_total: dataset.len(),
        n_kept: hyps.len(),
        task_accuracy: acc.accuracy,
        bleu_1: None,
        bleu_2: None,
        bleu_3: None,
        bleu_4: None,
        rouge_l: None,
        cider: None,
        cider_idf_fingerprint: None,
        cider_degenerate: false,
        embed_sim: None,
        meteor: None,
        spice: None,
        unparsed,
        verdicts,
    };
    if hyps.is_empty() {
        return Ok(report);
    }
    let b = bleu(&hyps, &refs, 4)?;
    report.bleu_1 = Some(b[0]);
    report.bleu_2 = Some(b[1]);
    report.bleu_3 = Some(b[2]);
    report.bleu_4 = Some(b[3]);
    let n = hyps.len() as f64;
    report.rouge_l = Some(hyps.iter().zip(&refs).map(|(h, r)| rouge_l(h, r)).sum::<f64>() / n);
    let c = cider(&hyps, &refs)?;
    report.cider = Some(c.score);
    report.cider_degenerate = c.degenerate;
    report.cider_idf_fingerprint = Some(c.idf_fingerprint);
    if let Some(enc) = encoder {
        let total: f64 = hyps
            .iter()
            .zip(&refs)
            .map(|(h, rs)| rs.iter().map(|r| embed_sim_score(h, r, enc).f1).fold(0.0, f64::max))
            .sum();
        report.embed_sim = Some(total / n);
    }
    Ok(report)
}

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalFrameworkError, SentenceEncoder};
use crate::data::{NleExample, PredictionRecord, Task};
use crate::metrics::TokenEmbedder;
use crate::numerics::{FeedForward, LayerNormParams, Linear, MultiHeadAttention, ParamId, ParameterStore, Tape, Var, INIT_STD};
use crate::tokenizer::{normalize, tokenize, Vocabulary};
use crate::training::{run_stage, LossRecord, StageConfig, StageKind, StageReport, Trainable, TrainingError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { dim: 32, layers: 2, heads: 4, ff_dim: 64, max_len: 64 }
    }
}

#[derive(Clone, Copy, Debug)]
struct EncoderBlock {
    ln_attn: LayerNormParams,
    attn: MultiHeadAttention,
    ln_ff: LayerNormParams,
    ff: FeedForward,
}

/// Bidirectional text encoder with a first-token classification head over
/// the answers seen in training.
#[derive(Clone, Debug)]
pub struct ExplainPredictClassifier {
    pub config: ClassifierConfig,
    pub params: ParameterStore,
    vocab: Vocabulary,
    answers: Vec<String>,
    token_embed: ParamId,
    positions: ParamId,
    blocks: Vec<EncoderBlock>,
    ln_out: LayerNormParams,
    head: Linear,
}

impl Trainable for ExplainPredictClassifier {
    fn store(&self) -> &ParameterStore {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }
}

/// Training target of one example: soft answer frequencies or a single class.
#[derive(Clone, Debug, PartialEq)]
enum Target {
    Soft(Vec<f64>),
    Hard(usize),
}

impl ExplainPredictClassifier {
    /// Answer vocabulary is the sorted set of normalized training answers.
    pub fn new(
        config: ClassifierConfig,
        vocab: Vocabulary,
        train: &[NleExample],
        seed: u64,
    ) -> Result<Self, EvalFrameworkError> {
        let answers: Vec<String> =
            train.iter().flat_map(|e| e.answers.iter().map(|a| normalize(a))).collect::<BTreeSet<_>>().into_iter().collect();
        Self::with_answers(config, vocab, answers, seed)
    }

    /// Fresh classifier over a given answer list, which must be sorted and unique.
    pub fn with_answers(
        config: ClassifierConfig,
        vocab: Vocabulary,
        answers: Vec<String>,
        seed: u64,
    ) -> Result<Self, EvalFrameworkError> {
        if answers.is_empty() {
            return Err(EvalFrameworkError::EmptyAnswerVocabulary);
        }
        if answers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalFrameworkError::Checkpoint("answers must be sorted and unique".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let d = config.dim;
        let token_embed = store.add_normal("encoder.token_embed", &[vocab.len(), d], INIT_STD, &mut rng)?;
        let positions = store.add_normal("encoder.positions", &[config.max_len, d], INIT_STD, &mut rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let n = format!("encoder.blocks.{i}");
            blocks.push(EncoderBlock {
                ln_attn: LayerNormParams::new(&mut store, &format!("{n}.ln_attn"), d)?,
                attn: MultiHeadAttention::new(&mut store, &format!("{n}.attn"), d, d, config.heads, &mut rng)?,
                ln_ff: LayerNormParams::new(&mut store, &format!("{n}.ln_ff"), d)?,
                ff: FeedForward::new(&mut store, &format!("{n}.ff"), d, config.ff_dim, &mut rng)?,
            });
        }
        let ln_out = LayerNormParams::new(&mut store, "encoder.ln_out", d)?;
        let head = Linear::new(&mut store, "head", d, answers.len(), &mut rng)?;
        Ok(Self { config, params: store, vocab, answers, token_embed, positions, blocks, ln_out, head })
    }

    /// Rebuilds a trained classifier; every array must be present with its expected shape.
    pub fn from_parts(
        config: ClassifierConfig,
        vocab: Vocabulary,
        answers: Vec<String>,
        stored: &ParameterStore,
    ) -> Result<Self, EvalFrameworkError> {
        let mut clf = Self::with_answers(config, vocab, answers, 0)?;
        if stored.len() != clf.params.len() {
            return Err(EvalFrameworkError::Checkpoint(format!("{} arrays, expected {}", stored.len(), clf.params.len())));
        }
        for (_, p) in stored.iter() {
            clf.params
                .load(&p.name, p.value.shape(), p.value.data().to_vec())
                .map_err(|e| EvalFrameworkError::Checkpoint(format!("{}: {e}", p.name)))?;
        }
        Ok(clf)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn answer_index(&self, answer: &str) -> Option<usize> {
        self.answers.binary_search(&normalize(answer)).ok()
    }

    /// `<cls> question <sep> explanation`, explanation cut to fit `max_len`.
    pub fn encode_input(&self, question: &str, explanation: &str) -> Vec<usize> {
        let mut ids = alloc::vec![self.vocab.cls()];
        ids.extend(self.vocab.encode(question));
        ids.push(self.vocab.sep());
        ids.extend(self.vocab.encode(explanation));
        ids.truncate(self.config.max_len);
        ids
    }

    fn hidden(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var, EvalFrameworkError> {
        let table = tape.param(&self.params, self.token_embed);
        let tok = tape.gather(table, ids)?;
        let pos_table = tape.param(&self.params, self.positions);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather(pos_table, &positions)?;
        let mut h = tape.add(tok, pos)?;
        let s = &self.params;
        for b in &self.blocks {
            let n = b.ln_attn.forward(tape, s, h)?;
            let (a, _) = b.attn.forward(tape, s, n, n, None)?;
            h = tape.add(h, a)?;
            let n = b.ln_ff.forward(tape, s, h)?;
            let f = b.ff.forward(tape, s, n)?;
            h = tape.add(h, f)?;
        }
        Ok(self.ln_out.forward(tape, s, h)?)
    }

    fn logits(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var, EvalFrameworkError> {
        let h = self.hidden(tape, ids)?;
        let first = tape.slice_rows(h, 0, 1)?;
        Ok(self.head.forward(tape, &self.params, first)?)
    }

    /// Index of the highest-scoring answer, ties to the lower index.
    pub fn predict(&self, question: &str, explanation: &str) -> Result<usize, EvalFrameworkError> {
        let mut tape = Tape::new();
        let l = self.logits(&mut tape, &self.encode_input(question, explanation))?;
        let row = tape.value(l);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        Ok(best)
    }

    fn target(&self, e: &NleExample) -> Option<Target> {
        if e.task.multi_answer() {
            let mut mass = alloc::vec![0.0; self.answers.len()];
            let mut n = 0.0;
            for a in &e.answers {
                if let Some(i) = self.answer_index(a) {
                    mass[i] += 1.0;
                    n += 1.0;
                }
            }
            if n == 0.0 {
                return None;
            }
            mass.iter_mut().for_each(|m| *m /= n);
            Some(Target::Soft(mass))
        } else {
            self.answer_index(e.majority_answer()).map(Target::Hard)
        }
    }

    fn item_loss(&self, tape: &mut Tape, question: &str, explanation: &str, target: &Target) -> Result<Var, EvalFrameworkError> {
        let l = self.logits(tape, &self.encode_input(question, explanation))?;
        Ok(match target {
            Target::Soft(mass) => tape.bce_with_logits(l, mass)?,
            Target::Hard(c) => tape.cross_entropy(l, &[*c], &[true])?,
        })
    }

    /// Trains on `(question, explanation, answers)` triples: soft targets for
    /// multi-answer tasks, a single class otherwise.
    pub fn train(
        &mut self,
        cfg: &StageConfig,
        examples: &[(&NleExample, &str)],
        sink: &mut dyn FnMut(&LossRecord),
    ) -> Result<StageReport, EvalFrameworkError> {
        if cfg.stage != StageKind::ExplainPredict {
            return Err(TrainingError::Schema(format!("stage {} does not train the classifier", cfg.stage.as_str())).into());
        }
        let items: Vec<(&str, &str, Target)> = examples
            .iter()
            .filter_map(|(e, expl)| self.target(e).map(|t| (e.question.as_str(), *expl, t)))
            .collect();
        if items.is_empty() {
            return Err(EvalFrameworkError::EmptyAnswerVocabulary);
        }
        Ok(run_stage(
            self,
            cfg,
            items.len(),
            |m, tape, batch| {
                let mut total: Option<Var> = None;
                for &i in batch {
                    let (q, e, t) = &items[i];
                    let l = m.item_loss(tape, q, e, t).map_err(|e| TrainingError::Schema(format!("{e}")))?;
                    total = Some(match total {
                        None => l,
                        Some(acc) => tape.add(acc, l)?,
                    });
                }
                Ok(tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64))
            },
            |_| Ok(None),
            sink,
        )?)
    }

    /// Convenience: trains on each example's first ground-truth explanation.
    pub fn train_on_ground_truth(
        &mut self,
        cfg: &StageConfig,
        examples: &[NleExample],
        sink: &mut dyn FnMut(&LossRecord),
    ) -> Result<StageReport, EvalFrameworkError> {
        let pairs: Vec<(&NleExample, &str)> =
            examples.iter().map(|e| (e, e.explanations.first().map(|s| s.as_str()).unwrap_or(""))).collect();
        self.train(cfg, &pairs, sink)
    }
}

impl TokenEmbedder for ExplainPredictClassifier {
    /// Contextual hidden states of the tokens; out-of-vocabulary words use `<unk>`.
    fn embed_tokens(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        let mut ids = alloc::vec![self.vocab.cls()];
        ids.extend(tokens.iter().map(|t| self.vocab.id(t).unwrap_or(self.vocab.unk())));
        ids.truncate(self.config.max_len);
        let mut tape = Tape::new();
        let Ok(h) = self.hidden(&mut tape, &ids) else {
            return tokens.iter().map(|_| alloc::vec![0.0; self.config.dim]).collect();
        };
        let t = tape.to_tensor(h);
        let mut out: Vec<Vec<f64>> = (1..t.rows()).map(|i| t.row(i).to_vec()).collect();
        out.resize(tokens.len(), alloc::vec![0.0; self.config.dim]);
        out
    }
}

impl SentenceEncoder for ExplainPredictClassifier {
    /// Mean of the encoder's hidden states over `<cls> text`.
    fn encode(&self, text: &str) -> Vec<f64> {
        let mut ids = alloc::vec![self.vocab.cls()];
        ids.extend(self.vocab.encode(text));
        ids.truncate(self.config.max_len);
        let mut tape = Tape::new();
        match self.hidden(&mut tape, &ids) {
            Ok(h) => {
                let m = tape.mean_rows(h);
                tape.value(m).to_vec()
            }
            Err(_) => alloc::vec![0.0; self.config.dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainPredictReport {
    pub accuracy: f64,
    pub n_scored: usize,
    pub n_correct: usize,
    /// Test samples none of whose answers occur in training.
    pub n_excluded: usize,
    pub excluded_ids: Vec<String>,
    /// Scored samples whose generation had no delimiter; all count as wrong.
    pub n_unparsed: usize,
}

/// Feeds `<cls> question <sep> explanation` without the answer and checks
/// whether the classifier recovers one of the ground-truth answers.
pub fn explain_predict_accuracy(
    classifier: &ExplainPredictClassifier,
    predictions: &[PredictionRecord],
    dataset: &[NleExample],
) -> Result<ExplainPredictReport, EvalFrameworkError> {
    if predictions.is_empty() || dataset.is_empty() {
        return Err(EvalFrameworkError::Empty("explanation set"));
    }
    let by_id: BTreeMap<&str, &PredictionRecord> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut report =
        ExplainPredictReport { accuracy: 0.0, n_scored: 0, n_correct: 0, n_excluded: 0, excluded_ids: Vec::new(), n_unparsed: 0 };
    for e in dataset {
        let p = by_id.get(e.id.as_str()).ok_or_else(|| EvalFrameworkError::MissingPrediction(e.id.clone()))?;
        if e.answers.iter().all(|a| classifier.answer_index(a).is_none()) {
            report.n_excluded += 1;
            report.excluded_ids.push(e.id.clone());
            continue;
        }
        report.n_scored += 1;
        if !p.parsed {
            report.n_unparsed += 1;
            continue;
        }
        let predicted = &classifier.answers()[classifier.predict(&e.question, &p.explanation)?];
        if e.answers.iter().any(|a| normalize(a) == *predicted) {
            report.n_correct += 1;
        }
    }
    if report.n_scored > 0 {
        report.accuracy = report.n_correct as f64 / report.n_scored as f64;
    }
    Ok(report)
}

/// Predictions carrying each example's first ground-truth explanation.
pub fn ground_truth_predictions(dataset: &[NleExample]) -> Vec<PredictionRecord> {
    dataset
        .iter()
        .map(|e| PredictionRecord {
            id: e.id.clone(),
            answer: e.majority_answer().into(),
            explanation: e.explanations.first().cloned().unwrap_or_default(),
            parsed: true,
        })
        .collect()
}

/// Whether an example trains with soft targets.
pub fn uses_soft_targets(task: Task) -> bool {
    task.multi_answer()
}

/// Words of `text` known to the vocabulary; handy for building random-text baselines.
pub fn known_words(vocab: &Vocabulary, text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|w| vocab.contains(w)).collect()
}

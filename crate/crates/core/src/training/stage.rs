use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Schedule, ScheduleKind, TrainingError};
use crate::model::{multi_hot, NlxModel, Visual};
use crate::numerics::{ParameterStore, Tape, Var};
use crate::tokenizer::{Segment, Sequence};
use crate::vision::GridFeatures;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Pretrain,
    Finetune,
    Concepts,
    ExplainPredict,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Pretrain => "pretrain",
            StageKind::Finetune => "finetune",
            StageKind::Concepts => "concepts",
            StageKind::ExplainPredict => "explain_predict",
        }
    }
}

fn default_batch() -> usize {
    8
}

fn default_every() -> usize {
    3
}

fn default_factor() -> f64 {
    0.8
}

/// Everything one training stage needs besides its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: StageKind,
    pub lr: f64,
    pub schedule: ScheduleKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: Option<String>,
    #[serde(default)]
    pub val: Option<String>,
    /// Checkpoint to start from.
    #[serde(default)]
    pub init: Option<String>,
    /// Module names (`vision`, `decoder`, `concepts`) whose parameters stay fixed.
    #[serde(default)]
    pub frozen: Vec<String>,
    #[serde(default = "default_every")]
    pub step_every: usize,
    #[serde(default = "default_factor")]
    pub step_factor: f64,
    /// Batch size of the full-scale recipe, kept for reference only.
    #[serde(default)]
    pub reference_batch_size: Option<usize>,
}

impl StageConfig {
    /// Desk-scale defaults for `stage`.
    pub fn desk(stage: StageKind) -> Self {
        let (lr, schedule, epochs, frozen, reference): (f64, _, _, &[&str], _) = match stage {
            StageKind::Pretrain => (2e-3, ScheduleKind::Linear, 25, &[], 768),
            StageKind::Finetune => (1e-3, ScheduleKind::Linear, 10, &["vision"], 32),
            StageKind::Concepts => (1e-2, ScheduleKind::Step, 40, &["vision", "decoder"], 64),
            StageKind::ExplainPredict => (1e-3, ScheduleKind::Linear, 30, &[], 32),
        };
        Self {
            stage,
            lr,
            schedule,
            batch_size: default_batch(),
            epochs,
            seed: 0,
            train: None,
            val: None,
            init: None,
            frozen: frozen.iter().map(|s| String::from(*s)).collect(),
            // small data takes more epochs between decays than the full recipe
            step_every: if stage == StageKind::Concepts { 10 } else { default_every() },
            step_factor: default_factor(),
            reference_batch_size: Some(reference),
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainingError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainingError::Config("batch_size and epochs must be positive".into()));
        }
        if self.schedule == ScheduleKind::Step && (self.step_every == 0 || !(self.step_factor > 0.0)) {
            return Err(TrainingError::Config("step schedule needs step_every > 0 and step_factor > 0".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { kind: self.schedule, base_lr: self.lr, step_every: self.step_every, step_factor: self.step_factor }
    }
}

/// One optimizer step of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub steps: u64,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation loss after each epoch, when validation data was given.
    pub val_loss: Vec<f64>,
    pub records: Vec<LossRecord>,
}

/// Anything holding a parameter store that a stage can update.
pub trait Trainable {
    fn store(&self) -> &ParameterStore;
    fn store_mut(&mut self) -> &mut ParameterStore;
}

impl Trainable for NlxModel {
    fn store(&self) -> &ParameterStore {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }
}

/// Sets frozen flags exactly as listed: named modules frozen, the rest trainable.
pub fn apply_frozen(store: &mut ParameterStore, modules: &[String]) -> Result<(), TrainingError> {
    store.set_all_frozen(false);
    for m in modules {
        if store.set_frozen_prefix(&format!("{m}."), true) == 0 {
            return Err(TrainingError::Config(format!("unknown module {m:?} in frozen list")));
        }
    }
    Ok(())
}

/// Generic epoch loop: seeded shuffling, mini-batches, Adam, the schedule and
/// an optional validation pass after every epoch.
pub fn run_stage<M, L, V>(
    model: &mut M,
    cfg: &StageConfig,
    n_items: usize,
    mut batch_loss: L,
    mut validate: V,
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<StageReport, TrainingError>
where
    M: Trainable,
    L: FnMut(&M, &mut Tape, &[usize]) -> Result<Var, TrainingError>,
    V: FnMut(&M) -> Result<Option<f64>, TrainingError>,
{
    cfg.validate()?;
    if n_items == 0 {
        return Err(TrainingError::EmptyDataset);
    }
    apply_frozen(model.store_mut(), &cfg.frozen)?;
    let schedule = cfg.schedule();
    let per_epoch = n_items.div_ceil(cfg.batch_size) as u64;
    let total = per_epoch * cfg.epochs as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), AdamConfig::default());
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut report = StageReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let lr = schedule.lr(report.steps, total, epoch);
            let mut tape = Tape::new();
            let loss = batch_loss(model, &mut tape, batch)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(TrainingError::NonFiniteLoss { step: report.steps });
            }
            let grads = tape.backward(loss)?;
            let store = model.store_mut();
            store.zero_grad();
            tape.accumulate_into(&grads, store);
            adam.step(store, lr)?;
            let record = LossRecord { step: report.steps, lr, loss: value };
            sink(&record);
            report.records.push(record);
            report.steps += 1;
            sum += value * batch.len() as f64;
        }
        report.epoch_loss.push(sum / n_items as f64);
        if let Some(v) = validate(model)? {
            report.val_loss.push(v);
        }
    }
    model.store_mut().zero_grad();
    Ok(report)
}

/// Rejects data that does not fit the stage's loss before any step is taken.
fn check_nle_items(stage: StageKind, items: &[(&Sequence, Visual<'_>)]) -> Result<(), TrainingError> {
    for (i, (seq, _)) in items.iter().enumerate() {
        if seq.supervised() == 0 {
            return Err(TrainingError::Schema(format!("item {i} has no supervised tokens")));
        }
        let has_answer = seq.segments.iter().any(|s| *s == Segment::Ans);
        match stage {
            StageKind::Pretrain if has_answer => {
                return Err(TrainingError::Schema(format!("item {i} is not a caption sequence")));
            }
            StageKind::Finetune if !has_answer => {
                return Err(TrainingError::Schema(format!("item {i} has no answer segment")));
            }
            StageKind::Pretrain | StageKind::Finetune => {}
            other => {
                return Err(TrainingError::Schema(format!("stage {} does not train on sequences", other.as_str())));
            }
        }
    }
    Ok(())
}

/// Mean per-sequence loss over `items`, or `None` when there are none.
pub fn nle_eval_loss(model: &NlxModel, items: &[(&Sequence, Visual<'_>)]) -> Result<Option<f64>, TrainingError> {
    if items.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for item in items {
        sum += model.nle_loss(core::slice::from_ref(item))?;
    }
    Ok(Some(sum / items.len() as f64))
}

/// Caption pretraining or answer-and-explanation finetuning.
pub fn train_nle(
    model: &mut NlxModel,
    cfg: &StageConfig,
    train: &[(&Sequence, Visual<'_>)],
    val: &[(&Sequence, Visual<'_>)],
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<StageReport, TrainingError> {
    check_nle_items(cfg.stage, train)?;
    check_nle_items(cfg.stage, val)?;
    run_stage(
        model,
        cfg,
        train.len(),
        |m, tape, batch| {
            let items: Vec<(&Sequence, Visual<'_>)> = batch.iter().map(|&i| train[i]).collect();
            Ok(m.batch_loss(tape, &items)?)
        },
        |m| nle_eval_loss(m, val),
        sink,
    )
}

/// Mean summed binary cross-entropy of the concept head over `items`.
pub fn concept_eval_loss(model: &NlxModel, items: &[(&GridFeatures, &[usize])]) -> Result<Option<f64>, TrainingError> {
    if items.is_empty() {
        return Ok(None);
    }
    let mut tape = Tape::new();
    let loss = concept_batch_loss(model, &mut tape, items)?;
    Ok(Some(tape.scalar(loss)))
}

fn concept_batch_loss(
    model: &NlxModel,
    tape: &mut Tape,
    items: &[(&GridFeatures, &[usize])],
) -> Result<Var, TrainingError> {
    let n = model.concept_head().num_concepts();
    let mut total: Option<Var> = None;
    for (features, ids) in items {
        let target = multi_hot(ids, n)?;
        let x = model.visual(tape, Visual::Features(features))?;
        let l = model.concept_head().loss(tape, &model.params, x, target.data())?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.ok_or(TrainingError::EmptyDataset)?;
    Ok(tape.scale(total, 1.0 / items.len() as f64))
}

/// Multi-label concept-detector training on grid features.
pub fn train_concepts(
    model: &mut NlxModel,
    cfg: &StageConfig,
    train: &[(&GridFeatures, &[usize])],
    val: &[(&GridFeatures, &[usize])],
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<StageReport, TrainingError> {
    if cfg.stage != StageKind::Concepts {
        return Err(TrainingError::Schema(format!("stage {} does not train the concept head", cfg.stage.as_str())));
    }
    let n = model.concept_head().num_concepts();
    for (i, (_, ids)) in train.iter().chain(val).enumerate() {
        if let Some(bad) = ids.iter().find(|&&c| c >= n) {
            return Err(TrainingError::Schema(format!("item {i} has concept id {bad} outside 0..{n}")));
        }
    }
    run_stage(
        model,
        cfg,
        train.len(),
        |m, tape, batch| {
            let items: Vec<(&GridFeatures, &[usize])> = batch.iter().map(|&i| train[i]).collect();
            concept_batch_loss(m, tape, &items)
        },
        |m| concept_eval_loss(m, val),
        sink,
    )
}

//! Glue between datasets on disk or in memory and the core stages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nlx_core::data::{image_path, NleExample, PredictionRecord, Task, World, WorldManifest};
use nlx_core::decoding::{answer_attention_maps, generate_conditioned, generate_greedy, AttentionGrid, GenerationResult};
use nlx_core::evalframeworks::{
    concept_indicator, plan_attack, score_attack, AttackQuery, AttackReport, Axis, Normalization, RetrievalIndex, SentenceEncoder,
};
use nlx_core::metrics::concept_accuracy_at_k;
use nlx_core::model::{NlxConfig, NlxModel, ObjectInput, TaskCaps, Visual};
use nlx_core::tokenizer::{assemble_caption_sequence, assemble_nle_sequence, assemble_prompt, tokenize, Prompt, Sequence, Vocabulary, DELIMITER};
use nlx_core::training::{train_concepts, train_nle, LossRecord, StageConfig, StageKind, StageReport};
use nlx_core::vision::{GridFeatures, Image, VisionConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::checkpoint::ModelCheckpoint;
use crate::formats::config::ModelSpec;
use crate::formats::dataset::{resolve_image, write_jsonl};
use crate::formats::ppm::{read_ppm, write_ppm};
use crate::formats::write_json;
use crate::{NlxError, Result};

/// Caps rayon's pool at `NLX_THREADS` when set. Safe to call more than once.
pub fn init_threads() {
    if let Some(n) = std::env::var("NLX_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// One caption-pretraining item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image: String,
    pub split: String,
    pub caption: String,
}

pub fn world_captions(world: &World) -> Vec<CaptionRecord> {
    world
        .splits()
        .iter()
        .flat_map(|(name, split)| {
            split.images.iter().map(|i| CaptionRecord { image: image_path(&i.id), split: (*name).into(), caption: i.caption.clone() })
        })
        .collect()
}

/// Every text that should be in the vocabulary: questions, answers,
/// explanations, concept words, object labels and references, captions.
pub fn vocabulary_corpus(examples: &[NleExample], captions: &[CaptionRecord], concepts: &[String]) -> Vec<String> {
    let mut out: Vec<String> = concepts.to_vec();
    out.push(DELIMITER.into());
    for e in examples {
        out.push(e.question.clone());
        out.extend(e.answers.iter().cloned());
        out.extend(e.explanations.iter().cloned());
        out.extend(e.concepts.iter().flatten().cloned());
        for o in e.objects.iter().flatten() {
            out.push(o.label.clone());
            out.push(o.reference.clone());
        }
    }
    out.extend(captions.iter().map(|c| c.caption.clone()));
    out
}

/// Vocabulary of a world: training text, training captions and the concept list.
pub fn world_vocabulary(world: &World) -> Result<Vocabulary> {
    let captions: Vec<CaptionRecord> = world_captions(world).into_iter().filter(|c| c.split == "train").collect();
    Ok(Vocabulary::build(&vocabulary_corpus(&world.train.examples, &captions, &world.config.concept_vocabulary()), 1)?)
}

/// Image references mapped to pixels, keyed the way dataset examples name them.
pub fn world_images(world: &World) -> BTreeMap<String, Image> {
    world.splits().iter().flat_map(|(_, s)| s.images.iter().map(|i| (image_path(&i.id), i.image.clone()))).collect()
}

/// Writes a world as `{train,val,test}.jsonl`, `captions.jsonl`, `images/`,
/// `vocab.json` and `world.json`. Returns the files written.
pub fn write_world(world: &World, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, split) in world.splits() {
        for img in &split.images {
            let p = out.join(image_path(&img.id));
            write_ppm(&p, &img.image)?;
            written.push(p);
        }
        let p = out.join(format!("{name}.jsonl"));
        write_jsonl(&p, &split.examples)?;
        written.push(p);
    }
    let p = out.join("captions.jsonl");
    write_jsonl(&p, &world_captions(world))?;
    written.push(p);
    let p = out.join("vocab.json");
    write_json(&p, &world_vocabulary(world)?.to_file())?;
    written.push(p);
    let p = out.join("world.json");
    write_json(&p, &world.manifest())?;
    written.push(p);
    Ok(written)
}

/// What `synth` writes next to the data.
pub fn read_world_manifest(dir: &Path) -> Result<WorldManifest> {
    crate::formats::read_json(&dir.join("world.json"))
}

/// Reads every image the examples reference, relative to the dataset file.
pub fn load_images(dataset: &Path, refs: impl IntoIterator<Item = String>) -> Result<BTreeMap<String, Image>> {
    let refs: BTreeSet<String> = refs.into_iter().collect();
    refs.into_iter().map(|r| Ok((r.clone(), read_ppm(&resolve_image(dataset, &r))?))).collect()
}

pub fn model_config(spec: &ModelSpec, vocab_size: usize, num_concepts: usize, image: (usize, usize)) -> NlxConfig {
    let mut cfg = NlxConfig::small(vocab_size, num_concepts);
    cfg.dim = spec.dim;
    cfg.layers = spec.layers;
    cfg.heads = spec.heads;
    cfg.ff_dim = spec.ff_dim;
    cfg.summary_dim = spec.summary_dim;
    cfg.vision = VisionConfig {
        image_width: image.0,
        image_height: image.1,
        patch: spec.patch,
        dim: spec.vision_dim,
        layers: spec.vision_layers,
        heads: spec.vision_heads,
        ff_dim: spec.vision_ff_dim,
    };
    cfg
}

pub fn new_checkpoint(spec: &ModelSpec, vocab: Vocabulary, concepts: Vec<String>, image: (usize, usize), seed: u64) -> Result<ModelCheckpoint> {
    let model = NlxModel::new(model_config(spec, vocab.len(), concepts.len(), image), seed)?;
    Ok(ModelCheckpoint { model, vocab, concepts })
}

/// Object slots of a grounded example. Unknown labels and references map to `<unk>`.
pub fn object_inputs(vocab: &Vocabulary, e: &NleExample) -> Vec<ObjectInput> {
    let id = |w: &str| vocab.id(w).unwrap_or(vocab.unk());
    e.objects
        .iter()
        .flatten()
        .map(|o| ObjectInput { label: id(&o.label), reference: id(&o.reference), bbox: o.bbox() })
        .collect()
}

/// Concept words go in front of entailment hypotheses only.
pub fn prefix_concepts(task: Task, concepts: Option<&Vec<String>>) -> &[String] {
    match (task, concepts) {
        (Task::Nli, Some(c)) => c,
        _ => &[],
    }
}

fn image_size(images: &BTreeMap<String, Image>) -> (usize, usize) {
    images.values().next().map(|i| (i.width(), i.height())).unwrap_or((1, 1))
}

/// One training sequence per reference explanation, paired with the image reference.
pub fn nle_items(vocab: &Vocabulary, examples: &[NleExample], caps: &TaskCaps, size: (usize, usize)) -> Result<Vec<(Sequence, String)>> {
    let mut out = Vec::new();
    for e in examples {
        let objects = object_inputs(vocab, e);
        let prompt =
            Prompt { question: &e.question, concepts: prefix_concepts(e.task, e.concepts.as_ref()), objects: &objects, image_size: size };
        for expl in &e.explanations {
            out.push((assemble_nle_sequence(vocab, &prompt, e.majority_answer(), expl, caps.for_task(e.task))?, e.image.clone()));
        }
    }
    Ok(out)
}

pub fn caption_items(vocab: &Vocabulary, captions: &[CaptionRecord], caps: &TaskCaps) -> Result<Vec<(Sequence, String)>> {
    captions.iter().map(|c| Ok((assemble_caption_sequence(vocab, &c.caption, caps.caption)?, c.image.clone()))).collect()
}

/// Grid features of every image under the model's current vision encoder.
pub fn compute_features(model: &NlxModel, images: &BTreeMap<String, Image>) -> Result<BTreeMap<String, GridFeatures>> {
    let list: Vec<(&String, &Image)> = images.iter().collect();
    let feats: Vec<Result<(String, GridFeatures)>> =
        list.par_iter().map(|(k, img)| Ok(((*k).clone(), model.features(img)?))).collect();
    feats.into_iter().collect()
}

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, key: &str) -> Result<&'a T> {
    map.get(key).ok_or_else(|| NlxError::Usage(format!("no image data for {key}")))
}

/// Trains on sequences; the vision encoder sees raw pixels unless it is frozen,
/// in which case features are computed once up front.
fn train_sequences(
    model: &mut NlxModel,
    cfg: &StageConfig,
    train: &[(Sequence, String)],
    val: &[(Sequence, String)],
    images: &BTreeMap<String, Image>,
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<StageReport> {
    let frozen_vision = cfg.frozen.iter().any(|m| m == "vision");
    let features = if frozen_vision { compute_features(model, images)? } else { BTreeMap::new() };
    let visual = |img: &str| -> Result<Visual<'_>> {
        Ok(if frozen_vision { Visual::Features(lookup(&features, img)?) } else { Visual::Image(lookup(images, img)?) })
    };
    let tr: Vec<(&Sequence, Visual<'_>)> = train.iter().map(|(s, i)| Ok((s, visual(i)?))).collect::<Result<_>>()?;
    let va: Vec<(&Sequence, Visual<'_>)> = val.iter().map(|(s, i)| Ok((s, visual(i)?))).collect::<Result<_>>()?;
    Ok(train_nle(model, cfg, &tr, &va, sink)?)
}

/// Caption pretraining on `captions`, validated on `val_captions`.
pub fn run_pretrain(
    ck: &mut ModelCheckpoint,
    cfg: &StageConfig,
    captions: &[CaptionRecord],
    val_captions: &[CaptionRecord],
    images: &BTreeMap<String, Image>,
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<StageReport> {
    let caps = ck.model.config().caps.clone();
    let train = caption_items(&ck.vocab, captions, &caps)?;
    let val = caption_items(&ck.vocab, val_captions, &caps)?;
    train_sequences(&mut ck.model, cfg, &train, &val, images, sink)
}

/// Answer-and-explanation finetuning.
pub fn run_finetune(
    ck: &mut ModelCheckpoint,
    cfg: &StageConfig,
    train: &[NleExample],
    val: &[NleExample],
    images: &BTreeMap<String, Image>,
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<StageReport> {
    let caps = ck.model.config().caps.clone();
    let size = image_size(images);
    let tr = nle_items(&ck.vocab, train, &caps, size)?;
    let va = nle_items(&ck.vocab, val, &caps, size)?;
    train_sequences(&mut ck.model, cfg, &tr, &va, images, sink)
}

/// Concept ids of each distinct image, from the examples' annotations.
pub fn image_concepts(examples: &[NleExample], concepts: &[String]) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for e in examples {
        let Some(words) = &e.concepts else { continue };
        let ids = words
            .iter()
            .map(|w| concepts.iter().position(|c| c == w).ok_or_else(|| NlxError::Usage(format!("{}: unknown concept {w}", e.id))))
            .collect::<Result<BTreeSet<usize>>>()?;
        out.entry(e.image.clone()).or_insert_with(|| ids.into_iter().collect());
    }
    Ok(out)
}

/// Cut-off of the reported concept accuracy.
pub const CONCEPT_K: usize = 5;

/// Concept-detector training on frozen features. Also returns top-5 accuracy on `val`.
pub fn run_concepts(
    ck: &mut ModelCheckpoint,
    cfg: &StageConfig,
    train: &[NleExample],
    val: &[NleExample],
    images: &BTreeMap<String, Image>,
    sink: &mut dyn FnMut(&LossRecord),
) -> Result<(StageReport, Option<f64>)> {
    let features = compute_features(&ck.model, images)?;
    let tr_ids = image_concepts(train, &ck.concepts)?;
    let va_ids = image_concepts(val, &ck.concepts)?;
    let items = |ids: &BTreeMap<String, Vec<usize>>| -> Result<Vec<(GridFeatures, Vec<usize>)>> {
        ids.iter().map(|(img, c)| Ok((lookup(&features, img)?.clone(), c.clone()))).collect()
    };
    let (tr, va) = (items(&tr_ids)?, items(&va_ids)?);
    let tr: Vec<(&GridFeatures, &[usize])> = tr.iter().map(|(f, c)| (f, c.as_slice())).collect();
    let va: Vec<(&GridFeatures, &[usize])> = va.iter().map(|(f, c)| (f, c.as_slice())).collect();
    let report = train_concepts(&mut ck.model, cfg, &tr, &va, sink)?;
    let accuracy = concept_accuracy(ck, val, &features, CONCEPT_K.min(ck.concepts.len()))?;
    Ok((report, accuracy))
}

/// Top-`k` concept accuracy of the detector over the distinct annotated images of `examples`.
pub fn concept_accuracy(ck: &ModelCheckpoint, examples: &[NleExample], features: &BTreeMap<String, GridFeatures>, k: usize) -> Result<Option<f64>> {
    let truth = image_concepts(examples, &ck.concepts)?;
    if truth.is_empty() {
        return Ok(None);
    }
    let mut predicted = Vec::with_capacity(truth.len());
    for img in truth.keys() {
        predicted.push(ck.model.detect_concepts(lookup(features, img)?, k)?.into_iter().map(|(c, _)| c).collect());
    }
    let gt: Vec<Vec<usize>> = truth.into_values().collect();
    Ok(Some(concept_accuracy_at_k(&predicted, &gt, k)?))
}

/// Generation input for `e`; `cap` left for generated tokens so the text part fits the task cap.
pub fn generation_prompt(ck: &ModelCheckpoint, e: &NleExample, size: (usize, usize)) -> Result<(Sequence, usize)> {
    let cap = ck.model.config().caps.for_task(e.task);
    let objects = object_inputs(&ck.vocab, e);
    let prompt = Prompt { question: &e.question, concepts: prefix_concepts(e.task, e.concepts.as_ref()), objects: &objects, image_size: size };
    let seq = assemble_prompt(&ck.vocab, &prompt, cap)?;
    let used = tokenize(&e.question).len() + 1;
    Ok((seq, cap.saturating_sub(used)))
}

/// Greedy answer and explanation, or only the explanation when `answer` is given.
pub fn generate_one(ck: &ModelCheckpoint, e: &NleExample, features: &GridFeatures, size: (usize, usize), answer: Option<&str>) -> Result<GenerationResult> {
    let (prompt, cap) = generation_prompt(ck, e, size)?;
    Ok(match answer {
        Some(a) => generate_conditioned(&ck.model, &ck.vocab, &prompt, a, features, cap)?,
        None => generate_greedy(&ck.model, &ck.vocab, &prompt, features, cap)?,
    })
}

pub fn prediction_record(e: &NleExample, r: &GenerationResult) -> PredictionRecord {
    PredictionRecord { id: e.id.clone(), answer: r.answer.clone(), explanation: r.explanation.clone(), parsed: r.parsed }
}

/// Generates for every example in parallel; output order follows `examples`.
pub fn generate_predictions(
    ck: &ModelCheckpoint,
    examples: &[NleExample],
    features: &BTreeMap<String, GridFeatures>,
    size: (usize, usize),
    answers: Option<&BTreeMap<String, String>>,
) -> Result<Vec<PredictionRecord>> {
    let out: Vec<Result<PredictionRecord>> = examples
        .par_iter()
        .map(|e| {
            let answer = match answers {
                Some(m) => Some(m.get(&e.id).ok_or_else(|| NlxError::Usage(format!("no answer given for {}", e.id)))?.as_str()),
                None => None,
            };
            Ok(prediction_record(e, &generate_one(ck, e, lookup(features, &e.image)?, size, answer)?))
        })
        .collect();
    out.into_iter().collect()
}

/// Generation for one example plus one attention map per answer token.
pub fn attention_maps(
    ck: &ModelCheckpoint,
    e: &NleExample,
    features: &GridFeatures,
    size: (usize, usize),
    layer: usize,
) -> Result<(GenerationResult, Vec<AttentionGrid>)> {
    let r = generate_one(ck, e, features, size, None)?;
    let maps = answer_attention_maps(&r, &ck.vocab, layer)?;
    Ok((r, maps))
}

/// Per-image context the attack reuses when pairing an image with a foreign question.
struct ImageContext<'a> {
    example: &'a NleExample,
    objects: Option<&'a NleExample>,
}

/// Retrieval attack over a test split. Retrieval runs in concept space:
/// images are embedded by the concept detector's scores, questions by the
/// concept words they mention. Questions naming no concept cannot be
/// retrieved and are left out of the gallery.
pub fn run_attack(
    ck: &ModelCheckpoint,
    examples: &[NleExample],
    features: &BTreeMap<String, GridFeatures>,
    size: (usize, usize),
    encoder: &dyn SentenceEncoder,
    k: usize,
    axis: Axis,
    norm: Normalization,
) -> Result<AttackReport> {
    let mut images: BTreeMap<&str, ImageContext<'_>> = BTreeMap::new();
    let mut questions: BTreeMap<&str, &NleExample> = BTreeMap::new();
    for e in examples {
        let ctx = images.entry(e.image.as_str()).or_insert(ImageContext { example: e, objects: None });
        if ctx.objects.is_none() && e.objects.is_some() {
            ctx.objects = Some(e);
        }
        if !e.question.trim().is_empty() {
            questions.entry(e.question.as_str()).or_insert(e);
        }
    }
    let image_vec = |img: &str| -> Result<Vec<f64>> { Ok(ck.model.concept_head().scores(&ck.model.params, lookup(features, img)?)?) };
    let text_vec = |q: &str| concept_indicator(q, &ck.concepts);
    let (queries, gallery): (Vec<AttackQuery>, Vec<(String, Vec<f64>)>) = match axis {
        Axis::Text => (
            questions.keys().map(|q| AttackQuery { id: (*q).into(), vector: text_vec(q) }).collect(),
            images.keys().map(|i| Ok(((*i).to_string(), image_vec(i)?))).collect::<Result<_>>()?,
        ),
        Axis::Image => (
            images.keys().map(|i| Ok(AttackQuery { id: (*i).into(), vector: image_vec(i)? })).collect::<Result<_>>()?,
            questions.keys().map(|q| ((*q).to_string(), text_vec(q))).filter(|(_, v)| v.iter().any(|x| *x != 0.0)).collect(),
        ),
    };
    let plan = plan_attack(&queries, &RetrievalIndex::new(gallery)?, k, axis)?;
    let pairs = plan.distinct_pairs();
    let generated: Vec<Result<((String, String), String)>> = pairs
        .par_iter()
        .map(|(q, img)| {
            let source = questions[q.as_str()];
            let ctx = &images[img.as_str()];
            // the question's task decides the prompt layout; grounding comes from the image
            let probe = NleExample {
                id: format!("{q} @ {img}"),
                task: source.task,
                image: img.clone(),
                question: q.clone(),
                answers: source.answers.clone(),
                explanations: source.explanations.clone(),
                concepts: ctx.example.concepts.clone(),
                objects: if source.task == Task::Vcr { ctx.objects.and_then(|o| o.objects.clone()) } else { None },
            };
            let r = generate_one(ck, &probe, lookup(features, img)?, size, None)?;
            Ok(((q.clone(), img.clone()), r.explanation))
        })
        .collect();
    let explanations = generated.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
    Ok(score_attack(&plan, &explanations, encoder, norm)?)
}

/// Majority answers keyed by example id, for conditioned generation.
pub fn answers_by_id(records: &[PredictionRecord]) -> BTreeMap<String, String> {
    records.iter().map(|p| (p.id.clone(), p.answer.clone())).collect()
}

pub fn stage_check(cfg: &StageConfig, expected: StageKind) -> Result<()> {
    if cfg.stage != expected {
        return Err(NlxError::Usage(format!("config is for stage {}, command runs {}", cfg.stage.as_str(), expected.as_str())));
    }
    cfg.validate()?;
    Ok(())
}

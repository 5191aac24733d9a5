//! `nlx` subcommands. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlx_core::data::{generate_world, NleExample, PredictionRecord, WorldConfig};
use nlx_core::evalframeworks::{
    explain_predict_accuracy, ground_truth_predictions, AttackReport, Axis, ClassifierConfig, ExplainPredictClassifier,
    ExplainPredictReport, Normalization,
};
use nlx_core::metrics::{evaluate_nle, AnswerRule, EvalMode, EvalReport, SIMILARITY_THRESHOLD};
use nlx_core::model::TaskCaps;
use nlx_core::tokenizer::{VocabFile, Vocabulary};
use nlx_core::training::{LossRecord, StageKind, StageReport};
use nlx_core::vision::{GridFeatures, Image};
use serde::Serialize;

use crate::formats::checkpoint::{load_classifier, load_model, save_classifier, save_model, ModelCheckpoint};
use crate::formats::config::{load_run_config, write_loss_log, RunConfig};
use crate::formats::dataset::{dataset_root, load_dataset, load_dataset_with, load_predictions, read_jsonl, write_jsonl};
use crate::formats::features::read_features;
use crate::formats::attention::write_attention;
use crate::formats::{read_json, write_json};
use crate::manifest::ManifestBuilder;
use crate::pipeline::{self, CaptionRecord};
use crate::{NlxError, Result};

#[derive(Parser, Debug)]
#[command(name = "nlx", version, about = "Answer-and-explanation models on a synthetic shapes world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic world and write its dataset files.
    Synth(SynthArgs),
    /// Caption pretraining.
    Pretrain(StageArgs),
    /// Answer-and-explanation finetuning.
    Finetune(StageArgs),
    /// Concept-detector training.
    Concepts(StageArgs),
    /// Greedy generation over a dataset file.
    Generate(GenerateArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Train the explain-predict classifier and score explanations with it.
    ExplainPredict(ExplainPredictArgs),
    /// Retrieval attack over a test split.
    Attack(AttackArgs),
    /// Cross-attention maps for the answer tokens of one example.
    AttnMap(AttnMapArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// World configuration (TOML or JSON); defaults fill missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub bias: Option<f64>,
    /// Comma-separated task list, e.g. `vqa,nli`.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<String>>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Args, Debug)]
pub struct StageArgs {
    /// Directory written by `synth` (or laid out the same way).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Starting checkpoint. Finetuning without one trains from scratch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset JSONL file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Predictions whose answers are force-fed; only explanations are generated.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// Precomputed feature file; its index is the same path with `.json`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Filtered,
    Unfiltered,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AnswerRuleArg {
    Set,
    Similarity,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "unfiltered")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "set")]
    pub answer_rule: AnswerRuleArg,
    /// Explain-predict classifier checkpoint used as the token embedder.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Args, Debug)]
pub struct ExplainPredictArgs {
    /// Directory with `train.jsonl` and `test.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    /// Generated predictions on the test split.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AxisArg {
    Text,
    Image,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Explain-predict classifier checkpoint; its encoder embeds explanations.
    #[arg(long)]
    pub encoder: PathBuf,
    /// Test dataset JSONL file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "text")]
    pub axis: AxisArg,
    /// Divide by K instead of the number of pairs.
    #[arg(long)]
    pub paper_normalization: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Args, Debug)]
pub struct AttnMapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Example id; the first example when omitted.
    #[arg(long)]
    pub id: Option<String>,
    /// Decoder layer whose cross-attention is drawn.
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pretty: bool,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run(argv: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    1
                }
            };
        }
    };
    pipeline::init_threads();
    match dispatch(cli.command, argv, stdout) {
        Ok(()) => 0,
        Err(NlxError::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            1
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

fn dispatch(command: Command, argv: &[String], out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, argv, out),
        Command::Pretrain(a) => stage(StageKind::Pretrain, a, argv, out),
        Command::Finetune(a) => stage(StageKind::Finetune, a, argv, out),
        Command::Concepts(a) => stage(StageKind::Concepts, a, argv, out),
        Command::Generate(a) => generate(a, argv, out),
        Command::Evaluate(a) => evaluate(a, argv, out),
        Command::ExplainPredict(a) => explain_predict(a, argv, out),
        Command::Attack(a) => attack(a, argv, out),
        Command::AttnMap(a) => attn_map(a, argv, out),
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T, pretty: bool, table: impl FnOnce(&T) -> String) -> Result<()> {
    let text = if pretty { table(value) } else { serde_json::to_string_pretty(value).expect("serializable report") };
    writeln!(out, "{text}").map_err(crate::io_err("<stdout>"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn synth(a: SynthArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let mut cfg: WorldConfig = match &a.config {
        Some(p) if p.extension().is_some_and(|e| e == "json") => read_json(p)?,
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(crate::io_err(p))?;
            toml::from_str(&text).map_err(|e| NlxError::Format { path: p.clone(), message: e.to_string() })?
        }
        None => WorldConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_images {
        cfg.n_images = n;
    }
    if let Some(b) = a.bias {
        cfg.bias_strength = b;
    }
    if let Some(t) = &a.tasks {
        cfg.tasks = t.iter().map(|s| s.parse().map_err(|_| NlxError::Usage(format!("unknown task {s:?}")))).collect::<Result<_>>()?;
    }
    cfg.validate().map_err(|e| NlxError::Usage(e.to_string()))?;
    let mut m = ManifestBuilder::new("synth", argv, cfg.seed);
    m.config(&cfg);
    if let Some(p) = &a.config {
        m.input(p);
    }
    let world = generate_world(&cfg)?;
    for p in pipeline::write_world(&world, &a.out)? {
        m.output(&p);
    }
    m.finish(&a.out)?;
    emit(out, &world.manifest(), a.pretty, |w| {
        format!("images  train {} val {} test {}\nexamples train {} val {} test {}", w.images.train, w.images.val, w.images.test, w.counts.train, w.counts.val, w.counts.test)
    })
}

/// Inputs of a `synth`-style data directory.
struct DataDir {
    train: PathBuf,
    val: PathBuf,
    test: PathBuf,
    captions: PathBuf,
    vocab: PathBuf,
    concepts: Vec<String>,
    caps: TaskCaps,
}

impl DataDir {
    fn open(dir: &Path) -> Result<Self> {
        let world = pipeline::read_world_manifest(dir)?;
        Ok(Self {
            train: dir.join("train.jsonl"),
            val: dir.join("val.jsonl"),
            test: dir.join("test.jsonl"),
            captions: dir.join("captions.jsonl"),
            vocab: dir.join("vocab.json"),
            concepts: world.concepts,
            caps: world.caps,
        })
    }
}

fn resolve_config(kind: StageKind, path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => load_run_config(p)?,
        None => RunConfig::desk(kind),
    };
    pipeline::stage_check(&cfg.stage, kind)?;
    if let Some(s) = seed {
        cfg.stage.seed = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct StageSummary<'a> {
    stage: &'a str,
    steps: u64,
    epoch_loss: &'a [f64],
    val_loss: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    val_concept_accuracy_at_5: Option<f64>,
}

fn stage(kind: StageKind, a: StageArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(kind, a.config.as_deref(), a.seed)?;
    let dir = DataDir::open(&a.data)?;
    let mut m = ManifestBuilder::new(kind.as_str(), argv, cfg.stage.seed);
    m.config(&cfg);
    let vocab = Vocabulary::from_file(&read_json::<VocabFile>(&dir.vocab)?)?;
    let (train, val) = match kind {
        StageKind::Pretrain => (Vec::new(), Vec::new()),
        _ => (load_dataset(&dir.train, &dir.caps)?, load_dataset(&dir.val, &dir.caps)?),
    };
    let captions: Vec<CaptionRecord> = if kind == StageKind::Pretrain { read_jsonl(&dir.captions)? } else { Vec::new() };
    let refs = train.iter().chain(&val).map(|e| e.image.clone()).chain(captions.iter().map(|c| c.image.clone()));
    let images = pipeline::load_images(&dir.train, refs)?;
    let size = images.values().next().map(|i| (i.width(), i.height())).ok_or_else(|| NlxError::Usage("no images".into()))?;
    let mut ck = match &a.checkpoint {
        Some(p) => {
            m.input(p);
            load_model(p)?
        }
        None if kind == StageKind::Concepts => return Err(NlxError::Usage("concepts needs --checkpoint".into())),
        None => pipeline::new_checkpoint(&cfg.model, vocab, dir.concepts.clone(), size, cfg.stage.seed)?,
    };
    for p in [&dir.vocab] {
        m.input(p);
    }
    let mut log: Vec<LossRecord> = Vec::new();
    let mut sink = |r: &LossRecord| log.push(*r);
    let mut concept_accuracy = None;
    let report: StageReport = match kind {
        StageKind::Pretrain => {
            m.input(&dir.captions);
            let (tr, va): (Vec<CaptionRecord>, Vec<CaptionRecord>) = captions.into_iter().filter(|c| c.split != "test").partition(|c| c.split == "train");
            pipeline::run_pretrain(&mut ck, &cfg.stage, &tr, &va, &images, &mut sink)?
        }
        StageKind::Finetune => {
            m.input(&dir.train);
            m.input(&dir.val);
            pipeline::run_finetune(&mut ck, &cfg.stage, &train, &val, &images, &mut sink)?
        }
        StageKind::Concepts => {
            m.input(&dir.train);
            m.input(&dir.val);
            let (r, acc) = pipeline::run_concepts(&mut ck, &cfg.stage, &train, &val, &images, &mut sink)?;
            concept_accuracy = acc;
            r
        }
        StageKind::ExplainPredict => unreachable!("separate command"),
    };
    let ckpt = a.out.join("model.ckpt");
    save_model(&ckpt, &ck)?;
    let loss = a.out.join("loss.jsonl");
    write_loss_log(&loss, &log)?;
    let summary = StageSummary { stage: kind.as_str(), steps: report.steps, epoch_loss: &report.epoch_loss, val_loss: &report.val_loss, val_concept_accuracy_at_5: concept_accuracy };
    let summary_path = a.out.join("report.json");
    write_json(&summary_path, &summary)?;
    for p in [&ckpt, &loss, &summary_path] {
        m.output(p);
    }
    m.finish(&a.out)?;
    emit(out, &summary, a.pretty, |s| {
        let mut t = format!("{} steps {}\nepoch  train     val\n", s.stage, s.steps);
        for (i, l) in s.epoch_loss.iter().enumerate() {
            t.push_str(&format!("{:>5}  {:.5}  {}\n", i + 1, l, fmt_opt(s.val_loss.get(i).copied())));
        }
        if let Some(a) = s.val_concept_accuracy_at_5 {
            t.push_str(&format!("val concept accuracy@5 {a:.4}\n"));
        }
        t.trim_end().into()
    })
}

fn dataset_images(data: &Path, examples: &[NleExample], features: Option<&Path>, ck: &ModelCheckpoint) -> Result<(BTreeMap<String, GridFeatures>, (usize, usize))> {
    match features {
        Some(bin) => {
            let feats = read_features(bin, &bin.with_extension("json"))?;
            let v = &ck.model.config().vision;
            Ok((feats, (v.image_width, v.image_height)))
        }
        None => {
            let images: BTreeMap<String, Image> = pipeline::load_images(data, examples.iter().map(|e| e.image.clone()))?;
            let size = images.values().next().map(|i| (i.width(), i.height())).unwrap_or((1, 1));
            Ok((pipeline::compute_features(&ck.model, &images)?, size))
        }
    }
}

fn load_examples(data: &Path, caps: &TaskCaps, features: Option<&Path>) -> Result<Vec<NleExample>> {
    match features {
        Some(bin) => {
            let idx: crate::formats::features::FeatureIndex = read_json(&bin.with_extension("json"))?;
            load_dataset_with(data, caps, &|r| idx.ids.contains_key(r))
        }
        None => load_dataset(data, caps),
    }
}

#[derive(Serialize)]
struct GenerateSummary {
    n: usize,
    unparsed: usize,
    predictions: String,
}

fn generate(a: GenerateArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let ck = load_model(&a.checkpoint)?;
    let mut m = ManifestBuilder::new("generate", argv, 0);
    m.input(&a.checkpoint);
    m.input(&a.data);
    let examples = load_examples(&a.data, &ck.model.config().caps, a.features.as_deref())?;
    let answers = match &a.answers {
        Some(p) => {
            m.input(p);
            Some(pipeline::answers_by_id(&load_predictions(p)?))
        }
        None => None,
    };
    let (features, size) = dataset_images(&a.data, &examples, a.features.as_deref(), &ck)?;
    let preds = pipeline::generate_predictions(&ck, &examples, &features, size, answers.as_ref())?;
    let path = a.out.join("predictions.jsonl");
    write_jsonl(&path, &preds)?;
    m.output(&path);
    m.finish(&a.out)?;
    let s = GenerateSummary { n: preds.len(), unparsed: preds.iter().filter(|p| !p.parsed).count(), predictions: path.display().to_string() };
    emit(out, &s, a.pretty, |s| format!("generated {} ({} unparsed) -> {}", s.n, s.unparsed, s.predictions))
}

fn eval_table(r: &EvalReport) -> String {
    format!(
        "mode {:?}  kept {}/{}  accuracy {:.4}\nBLEU-1 {}  BLEU-4 {}  ROUGE-L {}  CIDEr {}  embed-sim {}  unparsed {}",
        r.mode,
        r.n_kept,
        r.n_total,
        r.task_accuracy,
        fmt_opt(r.bleu_1),
        fmt_opt(r.bleu_4),
        fmt_opt(r.rouge_l),
        fmt_opt(r.cider),
        fmt_opt(r.embed_sim),
        r.unparsed
    )
}

fn evaluate(a: EvaluateArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let dataset: Vec<NleExample> = read_jsonl(&a.data)?;
    nlx_core::data::validate_dataset(&dataset, &TaskCaps::default())?;
    let preds = load_predictions(&a.pred)?;
    let encoder = a.encoder.as_deref().map(load_classifier).transpose()?;
    let rule = match (a.answer_rule, &encoder) {
        (AnswerRuleArg::Set, _) => AnswerRule::SetMembership,
        (AnswerRuleArg::Similarity, Some(enc)) => AnswerRule::Similarity { threshold: SIMILARITY_THRESHOLD, encoder: enc },
        (AnswerRuleArg::Similarity, None) => return Err(NlxError::Usage("--answer-rule similarity needs --encoder".into())),
    };
    let mode = match a.mode {
        ModeArg::Filtered => EvalMode::Filtered,
        ModeArg::Unfiltered => EvalMode::Unfiltered,
    };
    let report = evaluate_nle(&preds, &dataset, mode, rule, encoder.as_ref().map(|e| e as _))?;
    if let Some(dir) = &a.out {
        let mut m = ManifestBuilder::new("evaluate", argv, 0);
        m.input(&a.pred);
        m.input(&a.data);
        if let Some(p) = &a.encoder {
            m.input(p);
        }
        let p = dir.join("report.json");
        write_json(&p, &report)?;
        m.output(&p);
        m.finish(dir)?;
    }
    emit(out, &report, a.pretty, eval_table)
}

#[derive(Serialize)]
struct ExplainPredictSummary {
    ground_truth: ExplainPredictReport,
    generated: Option<ExplainPredictReport>,
    answers: usize,
}

fn explain_predict(a: ExplainPredictArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(StageKind::ExplainPredict, a.config.as_deref(), a.seed)?;
    let dir = DataDir::open(&a.data)?;
    let train = load_dataset(&dir.train, &dir.caps)?;
    let test = load_dataset(&dir.test, &dir.caps)?;
    let vocab = Vocabulary::from_file(&read_json::<VocabFile>(&dir.vocab)?)?;
    let mut m = ManifestBuilder::new("explain-predict", argv, cfg.stage.seed);
    m.config(&cfg);
    m.input(&dir.train);
    m.input(&dir.test);
    m.input(&dir.vocab);
    let mut clf = ExplainPredictClassifier::new(ClassifierConfig::default(), vocab, &train, cfg.stage.seed)?;
    let mut log = Vec::new();
    clf.train_on_ground_truth(&cfg.stage, &train, &mut |r| log.push(*r))?;
    let ground_truth = explain_predict_accuracy(&clf, &ground_truth_predictions(&test), &test)?;
    let generated = match &a.pred {
        Some(p) => {
            m.input(p);
            let preds: Vec<PredictionRecord> = load_predictions(p)?;
            Some(explain_predict_accuracy(&clf, &preds, &test)?)
        }
        None => None,
    };
    let summary = ExplainPredictSummary { ground_truth, generated, answers: clf.answers().len() };
    let ckpt = a.out.join("classifier.ckpt");
    save_classifier(&ckpt, &clf)?;
    let loss = a.out.join("loss.jsonl");
    write_loss_log(&loss, &log)?;
    let report = a.out.join("report.json");
    write_json(&report, &summary)?;
    for p in [&ckpt, &loss, &report] {
        m.output(p);
    }
    m.finish(&a.out)?;
    emit(out, &summary, a.pretty, |s| {
        let row = |name: &str, r: &ExplainPredictReport| {
            format!("{name:<10} accuracy {:.4}  scored {}  excluded {}  unparsed {}", r.accuracy, r.n_scored, r.n_excluded, r.n_unparsed)
        };
        let mut t = row("gt", &s.ground_truth);
        if let Some(g) = &s.generated {
            t.push('\n');
            t.push_str(&row("generated", g));
        }
        t
    })
}

fn attack(a: AttackArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    if a.k < 2 {
        return Err(NlxError::Usage("--k must be at least 2".into()));
    }
    let ck = load_model(&a.checkpoint)?;
    let clf = load_classifier(&a.encoder)?;
    let examples = load_dataset(&a.data, &ck.model.config().caps)?;
    let (features, size) = dataset_images(&a.data, &examples, None, &ck)?;
    let axis = match a.axis {
        AxisArg::Text => Axis::Text,
        AxisArg::Image => Axis::Image,
    };
    let norm = if a.paper_normalization { Normalization::PerItem } else { Normalization::PairCount };
    let report = pipeline::run_attack(&ck, &examples, &features, size, &clf, a.k, axis, norm)?;
    if let Some(dir) = &a.out {
        let mut m = ManifestBuilder::new("attack", argv, 0);
        for p in [&a.checkpoint, &a.encoder, &a.data] {
            m.input(p);
        }
        let p = dir.join("attack.json");
        write_json(&p, &report)?;
        m.output(&p);
        m.finish(dir)?;
    }
    emit(out, &report, a.pretty, |r: &AttackReport| {
        format!(
            "axis {:?}  K {}  queries {}  skipped {}  mean s_avg {}  ({:?})",
            r.axis,
            r.k,
            r.n_queries,
            r.n_skipped,
            fmt_opt(r.mean_s_avg),
            r.normalization
        )
    })
}

#[derive(Serialize)]
struct AttnMapSummary {
    id: String,
    answer: String,
    explanation: String,
    layer: usize,
    maps: Vec<AttnMapFile>,
}

#[derive(Serialize)]
struct AttnMapFile {
    step: usize,
    token: String,
    csv: String,
    pgm: String,
    argmax: (usize, usize),
}

fn attn_map(a: AttnMapArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let ck = load_model(&a.checkpoint)?;
    let examples = load_dataset(&a.data, &ck.model.config().caps)?;
    let e = match &a.id {
        Some(id) => examples.iter().find(|e| &e.id == id).ok_or_else(|| NlxError::Usage(format!("no example {id}")))?,
        None => &examples[0],
    };
    if a.layer >= ck.model.config().layers {
        return Err(NlxError::Usage(format!("--layer {} but the model has {} layers", a.layer, ck.model.config().layers)));
    }
    let images = pipeline::load_images(&a.data, [e.image.clone()])?;
    let img = &images[&e.image];
    let feats = ck.model.features(img)?;
    let (r, maps) = pipeline::attention_maps(&ck, e, &feats, (img.width(), img.height()), a.layer)?;
    let mut m = ManifestBuilder::new("attn-map", argv, 0);
    m.input(&a.checkpoint);
    m.input(&a.data);
    let steps = r.answer_steps(&ck.vocab);
    let mut files = Vec::new();
    for (step, grid) in steps.iter().zip(&maps) {
        let token = ck.vocab.token(r.token_ids[r.forced + step]).unwrap_or("<unk>").to_string();
        let csv = a.out.join(format!("attn_{step:02}.csv"));
        let pgm = a.out.join(format!("attn_{step:02}.pgm"));
        write_attention(&csv, &pgm, grid)?;
        m.output(&csv);
        m.output(&pgm);
        let best = grid.argmax();
        files.push(AttnMapFile { step: *step, token, csv: csv.display().to_string(), pgm: pgm.display().to_string(), argmax: (best / grid.cols, best % grid.cols) });
    }
    m.finish(&a.out)?;
    let _ = dataset_root(&a.data);
    let s = AttnMapSummary { id: e.id.clone(), answer: r.answer.clone(), explanation: r.explanation.clone(), layer: a.layer, maps: files };
    emit(out, &s, a.pretty, |s| {
        let mut t = format!("{}: {} because {}", s.id, s.answer, s.explanation);
        for f in &s.maps {
            t.push_str(&format!("\n  step {} {:<10} peak cell {:?}  {}", f.step, f.token, f.argmax, f.pgm));
        }
        t
    })
}

//! Acceptance suite: one pass/fail line per criterion on stdout.
//!
//! Runs without the libtest harness so the summary is always printed.
//! Heavy criteria train real models through the CLI code path in-process.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nlx::core::data::{generate_world, NleExample, PredictionRecord, Task, WorldConfig};
use nlx::core::decoding::generate_greedy;
use nlx::core::metrics::{
    bleu, cider, embed_sim_score, evaluate_nle, rouge_l, task_accuracy, AnswerRule, EmbeddingTable, EvalMode,
    SIMILARITY_THRESHOLD,
};
use nlx::core::model::{bbox_features, BBox, ModelError, NlxConfig, NlxModel, ObjectInput, Visual};
use nlx::core::numerics::{gradient_check, GradCheckConfig};
use nlx::core::tokenizer::{assemble_nle_sequence, assemble_prompt, tokenize, Prompt, Segment, Vocabulary};
use nlx::core::training::{train_nle, ScheduleKind, StageConfig, StageKind};
use nlx::core::vision::{GridFeatures, Image, VisionConfig};
use nlx::formats::checkpoint::load_model;
use nlx::pipeline;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const GRAD_TOL: f64 = 1e-4;
const GRAD_SECS: f64 = 60.0;
const MEMO_LOSS: f64 = 0.01;
const MEMO_MAX_STEPS: usize = 2000;
const MEMO_SECS: f64 = 300.0;
const CONCEPT_K: usize = 5;
const CONCEPT_MIN_ACC: f64 = 0.8;
const SUMMARY_TOL: f64 = 1e-10;
const METRIC_TOL: f64 = 1e-9;
const METRIC_CORPORA: usize = 60;
const SEED_PAIRS: u64 = 5;
const PAIRS_NEEDED: usize = 4;
const CIDER_POINTS: f64 = 2.0;
const PRETRAIN_SECS: f64 = 1200.0;
const EP_BAND: f64 = 0.03;
const EP_MIN_TEST: usize = 500;
const EP_MIN_GT: f64 = 0.95;
const S_AVG_HAND: f64 = 0.47140;
const S_AVG_HAND_TOL: f64 = 1e-5;
const BIAS: f64 = 0.95;
const ATTACK_K: &str = "5";

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- CLI glue

/// Runs one `nlx` command in-process; returns parsed stdout.
fn nlx(args: &[&str]) -> Result<Value, String> {
    let argv: Vec<String> = std::iter::once("nlx").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = nlx::cli::run(&argv, &mut out, &mut err);
    if code != 0 {
        return Err(format!("`nlx {}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err).trim()));
    }
    serde_json::from_slice(&out).map_err(|e| format!("`nlx {}` printed non-JSON: {e}", args.join(" ")))
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn write_file(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).expect("write config");
    path.to_path_buf()
}

fn num(v: &Value, pointer: &str) -> Result<f64, String> {
    v.pointer(pointer).and_then(Value::as_f64).ok_or_else(|| format!("no number at {pointer} in {v}"))
}

fn world_toml(dir: &Path, n_images: usize, tasks: &[&str], ratios: [f64; 3], seed: u64, bias: f64) -> PathBuf {
    let tasks: Vec<String> = tasks.iter().map(|t| format!("{t:?}")).collect();
    write_file(
        &dir.join("world.toml"),
        &format!(
            "n_images = {n_images}\ntasks = [{}]\nratios = [{}, {}, {}]\nseed = {seed}\nbias_strength = {bias}\n",
            tasks.join(", "),
            ratios[0],
            ratios[1],
            ratios[2]
        ),
    )
}

/// Synth, caption pretraining, concept training and finetuning. Returns the world dir.
fn trained_world(dir: &Path, seed: u64, bias: f64) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let s = seed.to_string();
    let w = dir.join("w");
    let cfg = world_toml(dir, 625, &["vqa"], [0.8, 0.1, 0.1], seed, bias);
    nlx(&["synth", "--config", p(&cfg), "--out", p(&w)])?;
    nlx(&["pretrain", "--data", p(&w), "--seed", &s, "--out", p(&dir.join("pre"))])?;
    nlx(&["concepts", "--data", p(&w), "--seed", &s, "--checkpoint", p(&dir.join("pre/model.ckpt")), "--out", p(&dir.join("con"))])?;
    nlx(&["finetune", "--data", p(&w), "--seed", &s, "--checkpoint", p(&dir.join("con/model.ckpt")), "--out", p(&dir.join("ft"))])?;
    Ok(w)
}

fn cider_of(dir: &Path, ckpt: &Path, test: &Path) -> Result<f64, String> {
    let gen = dir.join("gen");
    nlx(&["generate", "--checkpoint", p(ckpt), "--data", p(test), "--out", p(&gen)])?;
    let report = nlx(&["evaluate", "--pred", p(&gen.join("predictions.jsonl")), "--data", p(test)])?;
    num(&report, "/cider")
}

// ---------------------------------------------------------------- 1

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let vocab = Vocabulary::build(&["obj1 is a red square because obj2 is blue", "what is obj1 ? square circle"], 1)
        .map_err(|e| e.to_string())?;
    let mut cfg = NlxConfig::small(vocab.len(), 4);
    cfg.vision = VisionConfig { image_width: 8, image_height: 8, patch: 4, dim: 32, layers: 1, heads: 4, ff_dim: 32 };
    check(cfg.layers == 2 && cfg.dim == 32, || "model is not 2-layer d=32".into())?;
    let model = NlxModel::new(cfg, 11).map_err(|e| e.to_string())?;
    let id = |w: &str| vocab.id(w).expect("word in vocabulary");
    let objects = [
        ObjectInput { label: id("square"), reference: id("obj1"), bbox: BBox::new(0.0, 0.0, 4.0, 4.0) },
        ObjectInput { label: id("circle"), reference: id("obj2"), bbox: BBox::new(2.0, 3.0, 8.0, 8.0) },
    ];
    let prompt = Prompt { question: "what is obj1?", concepts: &["red".into()], objects: &objects, image_size: (8, 8) };
    let seq = assemble_nle_sequence(&vocab, &prompt, "square", "obj1 is a red square", 60).map_err(|e| e.to_string())?;
    let data: Vec<f64> = (0..8 * 8 * 3).map(|i| ((i * 53) % 97) as f64 / 96.0).collect();
    let image = Image::new(8, 8, data).map_err(|e| e.to_string())?;
    let mut store = model.params.clone();
    let report = gradient_check(
        &mut store,
        |s, tape| -> Result<_, ModelError> {
            let mut m = model.clone();
            m.params = s.clone();
            let mem = m.visual(tape, Visual::Image(&image))?;
            let nle = m.sequence_loss(tape, &seq, mem)?;
            let concepts = m.concept_head().loss(tape, &m.params, mem, &[0.0, 1.0, 1.0, 0.0])?;
            Ok(tape.add(nle, concepts)?)
        },
        GradCheckConfig { tol: GRAD_TOL, max_per_param: Some(8), ..Default::default() },
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let names: BTreeSet<&str> = report.entries.iter().map(|e| e.name.split('.').next().unwrap_or("")).collect();
    check(names.contains("concepts") && names.contains("vision"), || format!("modules checked: {names:?}"))?;
    check(report.entries.iter().any(|e| e.name.contains("box") || e.name.contains("orn")), || "no VCR embedding parameters checked".into())?;
    let worst = report.worst().ok_or("nothing checked")?;
    check(report.passed(), || format!("max rel err {:.2e} at {}", report.max_rel_err, worst.name))?;
    check(secs < GRAD_SECS, || format!("took {secs:.1}s"))?;
    Ok(format!("max rel err {:.2e} over {} scalars, {secs:.1}s", report.max_rel_err, report.checked()))
}

// ---------------------------------------------------------------- 2

fn c2_memorization() -> Outcome {
    let start = Instant::now();
    let world = generate_world(&WorldConfig { n_images: 10, tasks: vec![Task::Vqa], seed: 2, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let examples: Vec<NleExample> = world.train.examples.iter().take(8).cloned().collect();
    check(examples.len() == 8, || format!("only {} examples", examples.len()))?;
    let images = pipeline::world_images(&world);
    let vocab = Vocabulary::build(&pipeline::vocabulary_corpus(&examples, &[], &[]), 1).map_err(|e| e.to_string())?;
    let mut cfg = NlxConfig::small(vocab.len(), 1);
    cfg.vision.image_width = 32;
    cfg.vision.image_height = 32;
    let mut model = NlxModel::new(cfg.clone(), 5).map_err(|e| e.to_string())?;
    let features: BTreeMap<String, GridFeatures> = pipeline::compute_features(&model, &images).map_err(|e| e.to_string())?;
    let items = pipeline::nle_items(&vocab, &examples, &cfg.caps, (32, 32)).map_err(|e| e.to_string())?;
    let batch: Vec<_> = items.iter().map(|(s, img)| (s, Visual::Features(&features[img]))).collect();
    let stage = StageConfig {
        lr: 3e-3,
        schedule: ScheduleKind::Linear,
        epochs: MEMO_MAX_STEPS / 2,
        frozen: vec!["vision".into()],
        ..StageConfig::desk(StageKind::Finetune)
    };
    let report = train_nle(&mut model, &stage, &batch, &[], &mut |_| {}).map_err(|e| e.to_string())?;
    check(report.steps as usize <= MEMO_MAX_STEPS, || format!("{} steps", report.steps))?;
    let loss = batch.iter().map(|b| model.nle_loss(std::slice::from_ref(b))).sum::<Result<f64, _>>().map_err(|e| e.to_string())?
        / batch.len() as f64;
    check(loss < MEMO_LOSS, || format!("loss {loss:.4} after {} steps", report.steps))?;
    for (e, (seq, img)) in examples.iter().zip(&items) {
        let prompt = assemble_prompt(&vocab, &Prompt { image_size: (32, 32), ..Prompt::question(&e.question) }, 40).map_err(|e| e.to_string())?;
        let r = generate_greedy(&model, &vocab, &prompt, &features[img], 40).map_err(|e| e.to_string())?;
        let bos = seq.token_ids.iter().position(|&t| t == vocab.bos()).ok_or("no <bos>")?;
        check(r.token_ids == seq.token_ids[bos + 1..], || format!("{}: generated {:?}", e.id, vocab.decode(&r.token_ids)))?;
        check(r.parsed && r.answer == e.answers[0] && r.explanation == e.explanations[0], || {
            format!("{}: parsed ({:?}, {:?})", e.id, r.answer, r.explanation)
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < MEMO_SECS, || format!("took {secs:.1}s"))?;
    Ok(format!("loss {loss:.5} after {} steps, 8/8 exact, {secs:.1}s", report.steps))
}

// ---------------------------------------------------------------- 3

/// `s = Σ softmax(w·LN(X + W2 relu(W1 X)))_i x_i` computed from raw parameters.
fn summary_oracle(model: &NlxModel, x: &GridFeatures) -> (Vec<f64>, Vec<f64>) {
    let get = |name: &str| model.params.value(model.params.id(name).expect(name)).clone();
    let (w1, b1, w2, b2) = (get("concepts.mlp_in.weight"), get("concepts.mlp_in.bias"), get("concepts.mlp_out.weight"), get("concepts.mlp_out.bias"));
    let (gain, beta, w) = (get("concepts.norm.gain"), get("concepts.norm.bias"), get("concepts.summary"));
    let (y, d) = (x.num_patches(), x.dim());
    let h = w1.shape()[1];
    let xs = x.tensor().data();
    let mut scores = vec![0.0; y];
    for i in 0..y {
        let row = &xs[i * d..(i + 1) * d];
        let hidden: Vec<f64> = (0..h).map(|j| (b1.data()[j] + (0..d).map(|k| row[k] * w1.data()[k * h + j]).sum::<f64>()).max(0.0)).collect();
        let r: Vec<f64> = (0..d).map(|k| row[k] + b2.data()[k] + (0..h).map(|j| hidden[j] * w2.data()[j * d + k]).sum::<f64>()).collect();
        let mean = r.iter().sum::<f64>() / d as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let v: Vec<f64> = (0..d).map(|k| (r[k] - mean) / (var + 1e-5).sqrt() * gain.data()[k] + beta.data()[k]).collect();
        scores[i] = (0..d).map(|k| v[k] * w.data()[k]).sum();
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
    let s = (0..d).map(|k| (0..y).map(|i| alpha[i] * xs[i * d + k]).sum()).collect();
    (s, alpha)
}

fn c3_concepts(world: &Path, ckpt: &Path) -> Outcome {
    let ck = load_model(ckpt).map_err(|e| e.to_string())?;
    let manifest = pipeline::read_world_manifest(world).map_err(|e| e.to_string())?;
    check(manifest.images.train == 500, || format!("{} training images", manifest.images.train))?;
    let mut held_out = Vec::new();
    for split in ["val.jsonl", "test.jsonl"] {
        held_out.extend(nlx::formats::dataset::load_dataset(&world.join(split), &manifest.caps).map_err(|e| e.to_string())?);
    }
    let path = world.join("val.jsonl");
    let images = pipeline::load_images(&path, held_out.iter().map(|e| e.image.clone())).map_err(|e| e.to_string())?;
    let features = pipeline::compute_features(&ck.model, &images).map_err(|e| e.to_string())?;
    let acc = pipeline::concept_accuracy(&ck, &held_out, &features, CONCEPT_K).map_err(|e| e.to_string())?.ok_or("no concepts")?;
    let mut worst = 0.0f64;
    for f in features.values().take(5) {
        let (s, alpha) = ck.model.concept_summary(f).map_err(|e| e.to_string())?;
        let (os, oa) = summary_oracle(&ck.model, f);
        for (a, b) in s.iter().zip(&os).chain(alpha.iter().zip(&oa)) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst < SUMMARY_TOL, || format!("summary differs from oracle by {worst:.2e}"))?;
    check(acc >= CONCEPT_MIN_ACC, || format!("accuracy@{CONCEPT_K} {acc:.4} on {} held-out images", images.len()))?;
    Ok(format!("accuracy@{CONCEPT_K} {acc:.4} on {} held-out images; summary oracle within {worst:.1e}", images.len()))
}

// ---------------------------------------------------------------- 4

fn grams(t: &[String], n: usize) -> Vec<&[String]> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| &t[i..i + n]).collect()
}

fn occurrences(list: &[&[String]], g: &[String]) -> usize {
    list.iter().filter(|x| **x == g).count()
}

fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>], max_n: usize) -> Vec<f64> {
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    let mut m = vec![0usize; max_n];
    let mut t = vec![0usize; max_n];
    for (h, rs) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        let mut best = rs[0].len();
        for r in rs {
            let (d, bd) = (r.len().abs_diff(h.len()), best.abs_diff(h.len()));
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        ref_len += best;
        for n in 1..=max_n {
            let hg = grams(h, n);
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &hg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let max_ref = rs.iter().map(|r| occurrences(&grams(r, n), g)).max().unwrap_or(0);
                m[n - 1] += occurrences(&hg, g).min(max_ref);
            }
            t[n - 1] += hg.len();
        }
    }
    let bp = if hyp_len == 0 { 0.0 } else if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    (1..=max_n)
        .map(|n| {
            if (0..n).any(|i| m[i] == 0) {
                0.0
            } else {
                bp * ((0..n).map(|i| (m[i] as f64 / t[i] as f64).ln()).sum::<f64>() / n as f64).exp()
            }
        })
        .collect()
}

/// Longest common subsequence by trying every subsequence of the shorter side.
fn lcs_brute(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let pick: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        let mut it = long.iter();
        if pick.iter().all(|w| it.any(|x| x == *w)) {
            best = best.max(pick.len());
        }
    }
    best
}

fn rouge_oracle(h: &[String], refs: &[Vec<String>]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    refs.iter()
        .map(|r| {
            let l = lcs_brute(h, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (p, rec) = (l / h.len() as f64, l / r.len() as f64);
            (1.0 + beta2) * p * rec / (rec + beta2 * p)
        })
        .fold(0.0, f64::max)
}

fn cider_oracle(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let n_img = refs.len() as f64;
    let mut total = 0.0;
    for (h, rs) in hyps.iter().zip(refs) {
        let mut per_n = 0.0;
        for n in 1..=4 {
            let df = |g: &[String]| refs.iter().filter(|set| set.iter().any(|r| grams(r, n).contains(&g))).count();
            let vector = |t: &[String]| -> Vec<(Vec<String>, f64)> {
                let all = grams(t, n);
                let mut out: Vec<(Vec<String>, f64)> = Vec::new();
                for g in &all {
                    if out.iter().any(|(x, _)| x.as_slice() == *g) {
                        continue;
                    }
                    let idf = n_img.ln() - (df(g).max(1) as f64).ln();
                    out.push((g.to_vec(), occurrences(&all, g) as f64 * idf));
                }
                out
            };
            let hv = vector(h);
            let mut sum = 0.0;
            for r in rs {
                let rv = vector(r);
                let dot: f64 = hv.iter().map(|(g, x)| x * rv.iter().find(|(k, _)| k == g).map_or(0.0, |(_, y)| *y)).sum();
                let na = hv.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                let nb = rv.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                sum += if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
            }
            per_n += sum / rs.len() as f64;
        }
        total += per_n / 4.0 * 10.0;
    }
    total / hyps.len() as f64
}

fn embed_oracle(h: &[String], r: &[String], table: &BTreeMap<String, Vec<f64>>) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let best = |x: &String, ys: &[String]| {
        let mut arg = 0;
        for j in 1..ys.len() {
            if cos(&table[x], &table[&ys[j]]) > cos(&table[x], &table[&ys[arg]]) {
                arg = j;
            }
        }
        cos(&table[x], &table[&ys[arg]])
    };
    let p = h.iter().map(|x| best(x, r)).sum::<f64>() / h.len() as f64;
    let rc = r.iter().map(|x| best(x, h)).sum::<f64>() / r.len() as f64;
    if p + rc > 0.0 {
        2.0 * p * rc / (p + rc)
    } else {
        0.0
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn c4_metrics() -> Outcome {
    let lexicon = ["the", "red", "square", "is", "a", "circle", "small"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.random_range(1..=7);
        (0..n).map(|_| lexicon[rng.random_range(0..lexicon.len())].to_string()).collect()
    };
    let mut table = EmbeddingTable::new(4);
    let mut raw = BTreeMap::new();
    for w in lexicon {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        table.insert(w, v.clone());
        raw.insert(w.to_string(), v);
    }
    let mut worst = [0.0f64; 4];
    for _ in 0..METRIC_CORPORA {
        let size = rng.random_range(2..=5);
        let hyps: Vec<Vec<String>> = (0..size).map(|_| sentence(&mut rng)).collect();
        let refs: Vec<Vec<Vec<String>>> =
            (0..size).map(|_| (0..rng.random_range(1..=3)).map(|_| sentence(&mut rng)).collect()).collect();
        let b = bleu(&hyps, &refs, 4).map_err(|e| e.to_string())?;
        for (x, y) in b.iter().zip(bleu_oracle(&hyps, &refs, 4)) {
            worst[0] = worst[0].max((x - y).abs());
        }
        for (h, r) in hyps.iter().zip(&refs) {
            worst[1] = worst[1].max((rouge_l(h, r) - rouge_oracle(h, r)).abs());
            worst[3] = worst[3].max((embed_sim_score(h, &r[0], &table).f1 - embed_oracle(h, &r[0], &raw)).abs());
        }
        let c = cider(&hyps, &refs).map_err(|e| e.to_string())?;
        worst[2] = worst[2].max((c.score - cider_oracle(&hyps, &refs)).abs());
    }
    let names = ["BLEU", "ROUGE-L", "CIDEr", "embed-sim"];
    for (n, w) in names.iter().zip(worst) {
        check(w < METRIC_TOL, || format!("{n} differs from oracle by {w:.2e}"))?;
    }
    // identity and hand-computed values
    let s = words("the red square is small");
    check(bleu(&[s.clone()], &[vec![s.clone()]], 4).map_err(|e| e.to_string())? == vec![1.0; 4], || "BLEU identity".into())?;
    let b1 = bleu(&[words("the the the the")], &[vec![words("the cat")]], 1).map_err(|e| e.to_string())?[0];
    check(b1 == 0.25, || format!("clipped BLEU-1 {b1}"))?;
    check(rouge_l(&s, &[s.clone()]) == 1.0, || "ROUGE-L identity".into())?;
    let r = rouge_l(&words("a b c d"), &[words("a c b d")]);
    check((r - 0.75).abs() < 1e-12, || format!("ROUGE-L hand value {r}"))?;
    check(rouge_l(&words("a b"), &[words("c d")]) == 0.0, || "ROUGE-L disjoint".into())?;
    let one = cider(&[s.clone()], &[vec![s.clone()]]).map_err(|e| e.to_string())?;
    check(one.score == 0.0 && one.degenerate, || "one-image CIDEr".into())?;
    check(embed_sim_score(&s, &s, &table).f1 == 1.0, || "embed-sim identity".into())?;
    Ok(format!(
        "{METRIC_CORPORA} corpora; worst |diff| BLEU {:.1e} ROUGE-L {:.1e} CIDEr {:.1e} embed-sim {:.1e}; identities exact",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ---------------------------------------------------------------- 5

fn c5_filtering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let answers = ["red", "blue", "green"];
    let expl = ["the square is red", "the circle is blue", "the small circle is green", "a square"];
    for trial in 0..30 {
        let n = rng.random_range(3..=8);
        let data: Vec<NleExample> = (0..n)
            .map(|i| NleExample {
                id: format!("e{i}"),
                task: Task::Vqa,
                image: "images/x.ppm".into(),
                question: "what color?".into(),
                answers: vec![answers[i % 3].into()],
                explanations: vec![expl[i % 4].into(), expl[(i + 1) % 4].into()],
                concepts: None,
                objects: None,
            })
            .collect();
        let mode = trial % 3; // mixed, all right, all wrong
        let preds: Vec<PredictionRecord> = data
            .iter()
            .map(|e| {
                let right = match mode {
                    0 => rng.random_bool(0.5),
                    1 => true,
                    _ => false,
                };
                PredictionRecord {
                    id: e.id.clone(),
                    answer: if right { e.answers[0].clone() } else { "purple".into() },
                    explanation: expl[rng.random_range(0..4)].into(),
                    parsed: true,
                }
            })
            .collect();
        let rule = AnswerRule::SetMembership;
        let acc = task_accuracy(&preds, &data, rule).map_err(|e| e.to_string())?;
        let f = evaluate_nle(&preds, &data, EvalMode::Filtered, rule, None).map_err(|e| e.to_string())?;
        let u = evaluate_nle(&preds, &data, EvalMode::Unfiltered, rule, None).map_err(|e| e.to_string())?;
        let kept: Vec<&str> = f.verdicts.iter().filter(|v| v.kept).map(|v| v.id.as_str()).collect();
        let correct: Vec<&str> = acc.verdicts.iter().filter(|v| v.1).map(|v| v.0.as_str()).collect();
        check(kept == correct, || format!("trial {trial}: kept {kept:?} vs correct {correct:?}"))?;
        check(f.n_kept == correct.len(), || format!("trial {trial}: n_kept"))?;
        if mode == 1 {
            let same = (f.bleu_1, f.bleu_4, f.rouge_l, f.cider) == (u.bleu_1, u.bleu_4, u.rouge_l, u.cider);
            check(same, || format!("trial {trial}: all correct but scores differ"))?;
        }
        if mode == 2 {
            check(f.n_kept == 0 && f.cider.is_none(), || format!("trial {trial}: all wrong but {} kept", f.n_kept))?;
        }
    }
    Ok("30 random datasets: kept set = correct set; all-correct scores equal; all-wrong keeps 0".into())
}

// ---------------------------------------------------------------- 6

fn c6_pretraining(root: &Path, worlds: &[(u64, PathBuf)], train_secs: f64) -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    let scratch_cfg = write_file(
        &root.join("scratch.toml"),
        "stage = \"finetune\"\nlr = 0.001\nschedule = \"linear\"\nepochs = 10\n# nothing is pretrained, so vision trains too\nfrozen = []\n",
    );
    for (seed, w) in worlds {
        let dir = w.parent().expect("world dir");
        let s = seed.to_string();
        let scratch = dir.join("scratch");
        let rs = nlx(&["finetune", "--data", p(w), "--seed", &s, "--config", p(&scratch_cfg), "--out", p(&scratch)])?;
        let rp: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("ft/report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let last = |v: &Value| -> Result<f64, String> {
            v["val_loss"].as_array().and_then(|a| a.last()).and_then(Value::as_f64).ok_or_else(|| "no val loss".into())
        };
        let (vp, vs) = (last(&rp)?, last(&rs)?);
        let test = w.join("test.jsonl");
        let cp = cider_of(&dir.join("eval_pre"), &dir.join("ft/model.ckpt"), &test)?;
        let cs = cider_of(&dir.join("eval_scratch"), &scratch.join("model.ckpt"), &test)?;
        let gain = (cp - cs) * 100.0;
        let win = vp < vs && gain >= CIDER_POINTS;
        wins += usize::from(win);
        rows.push(format!("seed {seed}: val {vp:.3}/{vs:.3} CIDEr {:+.1}", gain));
    }
    let secs = start.elapsed().as_secs_f64() + train_secs;
    check(wins >= PAIRS_NEEDED, || format!("{wins}/{SEED_PAIRS} pairs: {}", rows.join("; ")))?;
    check(secs < PRETRAIN_SECS, || format!("took {secs:.0}s"))?;
    Ok(format!("{wins}/{SEED_PAIRS} pairs ({}), {secs:.0}s", rows.join("; ")))
}

// ---------------------------------------------------------------- 7

fn c7_explain_predict(root: &Path) -> Outcome {
    let mut rows = Vec::new();
    for seed in [31u64, 32] {
        let dir = root.join(format!("ep{seed}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let s = seed.to_string();
        let w = dir.join("w");
        let cfg = world_toml(&dir, 1000, &["vqa", "nli"], [0.6, 0.1, 0.3], seed, 0.0);
        nlx(&["synth", "--config", p(&cfg), "--out", p(&w)])?;
        nlx(&["pretrain", "--data", p(&w), "--seed", &s, "--out", p(&dir.join("pre"))])?;
        nlx(&["finetune", "--data", p(&w), "--seed", &s, "--checkpoint", p(&dir.join("pre/model.ckpt")), "--out", p(&dir.join("ft"))])?;
        let gen = dir.join("gen");
        nlx(&["generate", "--checkpoint", p(&dir.join("ft/model.ckpt")), "--data", p(&w.join("test.jsonl")), "--out", p(&gen)])?;
        let r = nlx(&["explain-predict", "--data", p(&w), "--seed", &s, "--pred", p(&gen.join("predictions.jsonl")), "--out", p(&dir.join("ep"))])?;
        let (gt, generated) = (num(&r, "/ground_truth/accuracy")?, num(&r, "/generated/accuracy")?);
        let n = num(&r, "/ground_truth/n_scored")? as usize;
        rows.push(format!("seed {seed}: GT {gt:.4} generated {generated:.4} on {n}"));
        check(n >= EP_MIN_TEST, || format!("only {n} scored test samples"))?;
        check(gt > EP_MIN_GT, || format!("GT accuracy {gt:.4}; {}", rows.join("; ")))?;
        check(gt >= generated - EP_BAND, || format!("generated beats GT: {}", rows.join("; ")))?;
    }
    Ok(rows.join("; "))
}

// ---------------------------------------------------------------- 8

fn c8_attack(root: &Path, worlds: &[(u64, PathBuf)]) -> Outcome {
    use nlx::core::evalframeworks::{s_avg, Normalization, SentenceEncoder};
    let hand = s_avg(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]], Normalization::PairCount).map_err(|e| e.to_string())?;
    // gram entries of the hand example are {0, 0.70711, 0.70711}
    check((hand - S_AVG_HAND).abs() < S_AVG_HAND_TOL, || format!("hand example {hand}"))?;
    let mut wins = 0;
    let mut rows = Vec::new();
    for (seed, unbiased) in worlds {
        let s = seed.to_string();
        let base = unbiased.parent().expect("world dir");
        let encoder = base.join("ep");
        nlx(&["explain-predict", "--data", p(unbiased), "--seed", &s, "--out", p(&encoder)])?;
        let clf = nlx::formats::checkpoint::load_classifier(&encoder.join("classifier.ckpt")).map_err(|e| e.to_string())?;
        let same = clf.encode("the circle is yellow");
        let copies = vec![same.clone(), same.clone(), same.clone(), same];
        let ident = s_avg(&copies, Normalization::PairCount).map_err(|e| e.to_string())?;
        check(ident == 1.0, || format!("identical texts give {ident}"))?;
        let biased = trained_world(&root.join(format!("bias{seed}")), *seed, BIAS)?;
        let score = |w: &Path| -> Result<f64, String> {
            let dir = w.parent().expect("world dir");
            let r = nlx(&[
                "attack",
                "--checkpoint",
                p(&dir.join("ft/model.ckpt")),
                "--encoder",
                p(&encoder.join("classifier.ckpt")),
                "--data",
                p(&w.join("test.jsonl")),
                "--k",
                ATTACK_K,
                "--axis",
                "text",
            ])?;
            num(&r, "/mean_s_avg")
        };
        let (b, u) = (score(&biased)?, score(unbiased)?);
        wins += usize::from(b > u);
        rows.push(format!("seed {seed}: {b:.4} vs {u:.4}"));
    }
    check(wins >= PAIRS_NEEDED, || format!("biased higher in {wins}/{SEED_PAIRS}: {}", rows.join("; ")))?;
    Ok(format!("hand {hand:.5}; identical 1.0; biased higher in {wins}/{SEED_PAIRS} ({})", rows.join("; ")))
}

// ---------------------------------------------------------------- 9

fn c9_vcr() -> Outcome {
    let f = bbox_features(&BBox::new(0.0, 0.0, 32.0, 24.0), 32.0, 24.0).map_err(|e| e.to_string())?;
    check(f == [0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0], || format!("full box {f:?}"))?;
    let f = bbox_features(&BBox::new(10.0, 20.0, 30.0, 60.0), 100.0, 100.0).map_err(|e| e.to_string())?;
    // x1/W, y1/H, x2/W, y2/H, centre, width and height fractions
    let want = [10.0 / 100.0, 20.0 / 100.0, 30.0 / 100.0, 60.0 / 100.0, 40.0 / 200.0, 80.0 / 200.0, 20.0 / 100.0, 40.0 / 100.0];
    check(f == want, || format!("box (10,20,30,60) {f:?}"))?;
    check(bbox_features(&BBox::new(5.0, 5.0, 5.0, 9.0), 10.0, 10.0).is_err(), || "zero-width box accepted".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1.0..100.0), rng.random_range(1.0..100.0));
        let (x1, y1) = (rng.random_range(0.0..w * 0.9), rng.random_range(0.0..h * 0.9));
        let b = BBox::new(x1, y1, rng.random_range(x1 + 1e-3..=w), rng.random_range(y1 + 1e-3..=h));
        let f = bbox_features(&b, w, h).map_err(|e| e.to_string())?;
        check(f.iter().all(|v| (0.0..=1.0).contains(v)), || format!("{b:?} gives {f:?}"))?;
    }

    let vocab = Vocabulary::build(&["what color is obj1 ? red because obj1 is a red square"], 1).map_err(|e| e.to_string())?;
    let plain = assemble_nle_sequence(&vocab, &Prompt::question("what color is obj1?"), "red", "obj1 is a red square", 60)
        .map_err(|e| e.to_string())?;
    let vcr = Prompt { question: "what color is obj1?", concepts: &[], objects: &[], image_size: (32, 32) };
    let empty = assemble_nle_sequence(&vocab, &vcr, "red", "obj1 is a red square", 60).map_err(|e| e.to_string())?;
    check(plain == empty, || "zero-object sequence differs".into())?;
    check(plain.segments.iter().all(|s| *s != Segment::Obj) && plain.orn_ids.iter().all(|&o| o == vocab.noj()), || {
        "plain sequence has object slots".into()
    })?;
    let model = NlxModel::new(NlxConfig::small(vocab.len(), 2), 9).map_err(|e| e.to_string())?;
    let (a, b) = (model.input_embeddings(&plain).map_err(|e| e.to_string())?, model.input_embeddings(&empty).map_err(|e| e.to_string())?);
    let bits = |t: &nlx::core::numerics::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    check(bits(&a) == bits(&b), || "zero-object embeddings differ".into())?;

    check(SIMILARITY_THRESHOLD == 0.92, || format!("threshold {SIMILARITY_THRESHOLD}"))?;
    let mut t = EmbeddingTable::new(2);
    t.insert("a", vec![1.0, 0.0]);
    t.insert("b", vec![0.6, 0.8]);
    let f1 = embed_sim_score(&tokenize("a"), &tokenize("a b"), &t).f1;
    let at = AnswerRule::Similarity { threshold: f1, encoder: &t };
    let above = AnswerRule::Similarity { threshold: f1 + f64::EPSILON, encoder: &t };
    check(at.is_correct("a", &["a b".into()]) && !above.is_correct("a", &["a b".into()]), || "threshold is not inclusive".into())?;
    Ok("bbox fixed points exact; 1000 random boxes in [0,1]; zero-object assembly bit-identical; threshold 0.92 inclusive".into())
}

// ---------------------------------------------------------------- 10

/// Every file under `dir`, manifests without their wall-clock field.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = std::fs::read(&path).expect("readable file");
            if path.file_name().is_some_and(|n| n == "manifest.json") {
                let mut v: Value = serde_json::from_slice(&bytes).expect("manifest JSON");
                v.as_object_mut().expect("manifest object").remove("wall_clock_secs");
                bytes = serde_json::to_vec(&v).expect("serializable");
            }
            out.insert(path.strip_prefix(dir).expect("under dir").to_path_buf(), bytes);
        }
    }
    out
}

fn c10_determinism(root: &Path) -> Outcome {
    let d = root.join("det");
    std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
    let tiny = |name: &str, body: &str| p(&write_file(&d.join(name), body)).to_string();
    let pre = tiny("pre.toml", "stage = \"pretrain\"\nlr = 0.002\nschedule = \"linear\"\nepochs = 2\n");
    let con = tiny("con.toml", "stage = \"concepts\"\nlr = 0.01\nschedule = \"step\"\nepochs = 3\nfrozen = [\"vision\", \"decoder\"]\n");
    let ft = tiny("ft.toml", "stage = \"finetune\"\nlr = 0.001\nschedule = \"linear\"\nepochs = 2\nfrozen = [\"vision\"]\n");
    let ep = tiny("ep.toml", "stage = \"explain_predict\"\nlr = 0.001\nschedule = \"linear\"\nepochs = 2\n");
    let at = |s: &str| p(&d.join(s)).to_string();
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("w", vec!["synth".into(), "--out".into(), at("w"), "--n-images".into(), "40".into(), "--seed".into(), "7".into(), "--tasks".into(), "vqa,act,nli,vcr".into()]),
        ("pre", vec!["pretrain".into(), "--data".into(), at("w"), "--config".into(), pre, "--out".into(), at("pre")]),
        ("con", vec!["concepts".into(), "--data".into(), at("w"), "--config".into(), con, "--checkpoint".into(), at("pre/model.ckpt"), "--out".into(), at("con")]),
        ("ft", vec!["finetune".into(), "--data".into(), at("w"), "--config".into(), ft, "--checkpoint".into(), at("con/model.ckpt"), "--out".into(), at("ft")]),
        ("gen", vec!["generate".into(), "--checkpoint".into(), at("ft/model.ckpt"), "--data".into(), at("w/test.jsonl"), "--out".into(), at("gen")]),
        ("eval", vec!["evaluate".into(), "--pred".into(), at("gen/predictions.jsonl"), "--data".into(), at("w/test.jsonl"), "--mode".into(), "filtered".into(), "--out".into(), at("eval")]),
        ("ep", vec!["explain-predict".into(), "--data".into(), at("w"), "--config".into(), ep, "--pred".into(), at("gen/predictions.jsonl"), "--out".into(), at("ep")]),
        ("att", vec!["attack".into(), "--checkpoint".into(), at("ft/model.ckpt"), "--encoder".into(), at("ep/classifier.ckpt"), "--data".into(), at("w/test.jsonl"), "--k".into(), "2".into(), "--out".into(), at("att")]),
        ("attn", vec!["attn-map".into(), "--checkpoint".into(), at("ft/model.ckpt"), "--data".into(), at("w/test.jsonl"), "--layer".into(), "1".into(), "--out".into(), at("attn")]),
    ];
    let mut files = 0;
    for (out, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let first = nlx(&args)?;
        let a = snapshot(&d.join(out));
        let second = nlx(&args)?;
        let b = snapshot(&d.join(out));
        check(first == second, || format!("{}: stdout differs", args[0]))?;
        let diff: Vec<&PathBuf> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
        check(diff.is_empty() && a.len() == b.len(), || format!("{}: files differ {diff:?}", args[0]))?;
        files += a.len();
    }
    Ok(format!("{} subcommands rerun; {files} artifacts byte-identical", commands.len()))
}

// ---------------------------------------------------------------- main

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let root = root.path();
    let mut results: BTreeMap<usize, Outcome> = BTreeMap::new();
    let mut run = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        eprintln!("criterion {n}: running");
        let r = f();
        eprintln!("criterion {n}: done in {:.0}s", start.elapsed().as_secs_f64());
        results.insert(n, r);
    };
    run(1, &mut c1_gradients);
    run(2, &mut c2_memorization);
    run(4, &mut c4_metrics);
    run(5, &mut c5_filtering);
    run(9, &mut c9_vcr);
    run(10, &mut || c10_determinism(root));

    // Criteria 3, 6 and 8 share the unbiased trained worlds.
    let start = Instant::now();
    let worlds: Result<Vec<(u64, PathBuf)>, String> =
        (1..=SEED_PAIRS).map(|s| trained_world(&root.join(format!("seed{s}")), s, 0.0).map(|w| (s, w))).collect();
    let train_secs = start.elapsed().as_secs_f64();
    match &worlds {
        Ok(worlds) => {
            let (w, dir) = (&worlds[0].1, worlds[0].1.parent().expect("world dir").to_path_buf());
            run(3, &mut || c3_concepts(w, &dir.join("con/model.ckpt")));
            run(6, &mut || c6_pretraining(root, worlds, train_secs));
            run(8, &mut || c8_attack(root, worlds));
        }
        Err(e) => {
            for n in [3, 6, 8] {
                run(n, &mut || Err(format!("training failed: {e}")));
            }
        }
    }
    run(7, &mut || c7_explain_predict(root));

    let mut failed = 0;
    let mut stdout = std::io::stdout().lock();
    for (n, r) in &results {
        let (tag, text) = match r {
            Ok(t) => ("PASS", t),
            Err(t) => {
                failed += 1;
                ("FAIL", t)
            }
        };
        writeln!(stdout, "criterion {n:>2}: {tag}  {text}").expect("stdout");
    }
    writeln!(stdout, "acceptance: {}/{} passed", results.len() - failed, results.len()).expect("stdout");
    drop(stdout);
    if failed > 0 {
        std::process::exit(1);
    }
}

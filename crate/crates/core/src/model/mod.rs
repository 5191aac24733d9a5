//! The answer-and-explanation decoder, its concept-detection head and the
//! object-slot input encoding.

mod concepts;
mod config;
mod objects;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use concepts::{multi_hot, top_k, ConceptHead, ConceptNodes, CONCEPT_PREFIX};
pub use config::{NlxConfig, TaskCaps};
pub use objects::{bbox_features, dangling_references, is_reference_token, BBox, ObjectInput};

use crate::numerics::{
    AttentionMask, FeedForward, LayerNormParams, Linear, MultiHeadAttention, NumericsError, ParamId, ParameterStore,
    Tape, Tensor, Var, INIT_STD,
};
use crate::tokenizer::{Segment, Sequence, TokenizerError, SPECIALS};
use crate::vision::{GridFeatures, Image, VisionEncoder, VisionError};

pub const DECODER_PREFIX: &str = "decoder.";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate or out-of-image box {0:?}")]
    DegenerateBox([f64; 4]),
    #[error("sequence of length {len} exceeds {max} positions")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("asked for top {k} of {n} concepts")]
    TooManyConcepts { k: usize, n: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// Token id of the marker whose embedding encodes `segment`.
pub fn segment_token(segment: Segment) -> usize {
    SPECIALS.iter().position(|&s| s == segment.marker()).expect("every marker is reserved")
}

/// Inverse of [`segment_token`].
pub fn segment_from_token(id: usize) -> Result<Segment, ModelError> {
    Segment::ALL
        .iter()
        .copied()
        .find(|&s| segment_token(s) == id)
        .ok_or(ModelError::Tokenizer(TokenizerError::UnknownSegment(id)))
}

/// Where the cross-attention memory comes from.
#[derive(Clone, Copy, Debug)]
pub enum Visual<'a> {
    /// Run the encoder on the tape (gradients reach it unless frozen).
    Image(&'a Image),
    /// Fixed features, e.g. cached from a frozen encoder or loaded from a feature file.
    Features(&'a GridFeatures),
}

#[derive(Clone, Copy, Debug)]
struct DecoderBlock {
    ln_self: LayerNormParams,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNormParams,
    cross_attn: MultiHeadAttention,
    ln_ff: LayerNormParams,
    ff: FeedForward,
}

/// Nodes of one decoder pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `L × V`.
    pub logits: Var,
    /// Final normalized hidden states, `L × d`.
    pub hidden: Var,
    /// Per layer, the cross-attention node; its probabilities are `heads × L × Y`.
    pub cross_attention: Vec<Var>,
}

/// Decoder, vision encoder and concept head sharing one parameter store.
#[derive(Clone, Debug)]
pub struct NlxModel {
    config: NlxConfig,
    pub params: ParameterStore,
    vision: VisionEncoder,
    token_embed: ParamId,
    positions: ParamId,
    box_proj: Linear,
    blocks: Vec<DecoderBlock>,
    ln_out: LayerNormParams,
    concepts: ConceptHead,
}

impl NlxModel {
    pub fn new(config: NlxConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let vision = VisionEncoder::new(&config.vision, &mut store, &mut rng)?;
        let p = DECODER_PREFIX;
        let d = config.dim;
        let token_embed = store.add_normal(&format!("{p}token_embed"), &[config.vocab_size, d], INIT_STD, &mut rng)?;
        let positions = store.add_normal(&format!("{p}positions"), &[config.max_positions, d], INIT_STD, &mut rng)?;
        let box_proj = Linear::new(&mut store, &format!("{p}box_proj"), 8, d, &mut rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let n = format!("{p}blocks.{i}");
            let vd = config.vision.dim;
            blocks.push(DecoderBlock {
                ln_self: LayerNormParams::new(&mut store, &format!("{n}.ln_self"), d)?,
                self_attn: MultiHeadAttention::new(&mut store, &format!("{n}.self_attn"), d, d, config.heads, &mut rng)?,
                ln_cross: LayerNormParams::new(&mut store, &format!("{n}.ln_cross"), d)?,
                cross_attn: MultiHeadAttention::new(&mut store, &format!("{n}.cross_attn"), d, vd, config.heads, &mut rng)?,
                ln_ff: LayerNormParams::new(&mut store, &format!("{n}.ln_ff"), d)?,
                ff: FeedForward::new(&mut store, &format!("{n}.ff"), d, config.ff_dim, &mut rng)?,
            });
        }
        let ln_out = LayerNormParams::new(&mut store, &format!("{p}ln_out"), d)?;
        let concepts =
            ConceptHead::new(&mut store, config.vision.dim, config.summary_dim, config.num_concepts, &mut rng)?;
        Ok(Self { config, params: store, vision, token_embed, positions, box_proj, blocks, ln_out, concepts })
    }

    /// Rebuilds a model from a configuration and stored arrays. Every expected
    /// array must be present with the expected shape and no extra arrays may appear.
    pub fn from_parts(config: NlxConfig, stored: &ParameterStore) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        for (_, p) in stored.iter() {
            if model.params.id(&p.name).is_none() {
                return Err(ModelError::Checkpoint(format!("unexpected array {}", p.name)));
            }
        }
        let names: Vec<String> = model.params.iter().map(|(_, p)| p.name.clone()).collect();
        for name in names {
            let src = stored
                .id(&name)
                .map(|id| stored.get(id))
                .ok_or_else(|| ModelError::Checkpoint(format!("missing array {name}")))?;
            model
                .params
                .load(&name, src.value.shape(), src.value.data().to_vec())
                .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &NlxConfig {
        &self.config
    }

    pub fn vision(&self) -> &VisionEncoder {
        &self.vision
    }

    pub fn concept_head(&self) -> &ConceptHead {
        &self.concepts
    }

    pub fn token_embedding(&self) -> ParamId {
        self.token_embed
    }

    /// Records the visual memory on `tape`.
    pub fn visual(&self, tape: &mut Tape, visual: Visual<'_>) -> Result<Var, ModelError> {
        match visual {
            Visual::Image(img) => Ok(self.vision.encode(tape, &self.params, img)?),
            Visual::Features(f) => {
                if f.dim() != self.config.vision.dim {
                    return Err(ModelError::Vision(VisionError::Dimensions(format!(
                        "features of width {} for cross-attention width {}",
                        f.dim(),
                        self.config.vision.dim
                    ))));
                }
                Ok(tape.constant(f.tensor()))
            }
        }
    }

    /// Encoder features outside of any training graph.
    pub fn features(&self, image: &Image) -> Result<GridFeatures, ModelError> {
        Ok(self.vision.features(&self.params, image)?)
    }

    fn check_sequence(&self, seq: &Sequence) -> Result<(), ModelError> {
        seq.check()?;
        if seq.is_empty() {
            return Err(ModelError::Tokenizer(TokenizerError::Malformed("empty sequence".into())));
        }
        let max = self.config.max_positions;
        if let Some(&p) = seq.position_ids.iter().find(|&&p| p >= max) {
            return Err(ModelError::TooLong { len: p + 1, max });
        }
        let vocab = self.config.vocab_size;
        if let Some(&id) = seq.token_ids.iter().chain(&seq.orn_ids).find(|&&t| t >= vocab) {
            return Err(ModelError::TokenOutOfRange { id, vocab });
        }
        if seq.object_boxes.iter().any(|(at, _)| *at >= seq.len()) {
            return Err(ModelError::Tokenizer(TokenizerError::Malformed("object slot past the end".into())));
        }
        Ok(())
    }

    /// Summed input embedding: token, segment, position and ORN rows plus the
    /// projected box at each object slot.
    pub fn embed(&self, tape: &mut Tape, seq: &Sequence) -> Result<Var, ModelError> {
        self.check_sequence(seq)?;
        let table = tape.param(&self.params, self.token_embed);
        let tok = tape.gather(table, &seq.token_ids)?;
        let seg_ids: Vec<usize> = seq.segments.iter().map(|&s| segment_token(s)).collect();
        let seg = tape.gather(table, &seg_ids)?;
        let pos_table = tape.param(&self.params, self.positions);
        let pos = tape.gather(pos_table, &seq.position_ids)?;
        let orn = tape.gather(table, &seq.orn_ids)?;
        let mut x = tape.add(tok, seg)?;
        x = tape.add(x, pos)?;
        x = tape.add(x, orn)?;
        if !seq.object_boxes.is_empty() {
            let rows: Vec<Vec<f64>> = seq.object_boxes.iter().map(|(_, b)| b.to_vec()).collect();
            let boxes = tape.constant(&Tensor::from_rows(&rows)?);
            let proj = self.box_proj.forward(tape, &self.params, boxes)?;
            let at: Vec<usize> = seq.object_boxes.iter().map(|(p, _)| *p).collect();
            x = tape.add_rows_at(x, proj, &at)?;
        }
        Ok(x)
    }

    /// The input embedding matrix as plain values.
    pub fn input_embeddings(&self, seq: &Sequence) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let x = self.embed(&mut tape, seq)?;
        Ok(tape.to_tensor(x))
    }

    /// Causal decoder pass with cross-attention to `memory` in every block.
    pub fn forward(&self, tape: &mut Tape, seq: &Sequence, memory: Var) -> Result<ForwardOutput, ModelError> {
        let (_, md) = tape.dims(memory);
        if md != self.config.vision.dim {
            return Err(ModelError::Vision(VisionError::Dimensions(format!(
                "memory width {md}, expected {}",
                self.config.vision.dim
            ))));
        }
        let mut h = self.embed(tape, seq)?;
        let mut cross_attention = Vec::with_capacity(self.blocks.len());
        let s = &self.params;
        for b in &self.blocks {
            let n = b.ln_self.forward(tape, s, h)?;
            let (a, _) = b.self_attn.forward(tape, s, n, n, Some(&AttentionMask::Causal))?;
            h = tape.add(h, a)?;
            let n = b.ln_cross.forward(tape, s, h)?;
            let (c, probs) = b.cross_attn.forward(tape, s, n, memory, None)?;
            cross_attention.push(probs);
            h = tape.add(h, c)?;
            let n = b.ln_ff.forward(tape, s, h)?;
            let f = b.ff.forward(tape, s, n)?;
            h = tape.add(h, f)?;
        }
        let hidden = self.ln_out.forward(tape, s, h)?;
        let table = tape.param(s, self.token_embed);
        let logits = tape.matmul_nt(hidden, table)?;
        Ok(ForwardOutput { logits, hidden, cross_attention })
    }

    /// Next-token negative log-likelihood of one sequence, averaged over its
    /// supervised tokens. Position `t` predicts token `t + 1`.
    pub fn sequence_loss(&self, tape: &mut Tape, seq: &Sequence, memory: Var) -> Result<Var, ModelError> {
        let out = self.forward(tape, seq, memory)?;
        let (targets, mask) = shifted_targets(seq);
        Ok(tape.cross_entropy(out.logits, &targets, &mask)?)
    }

    /// Mean over the batch of per-sequence losses, recorded on `tape`.
    pub fn batch_loss(&self, tape: &mut Tape, batch: &[(&Sequence, Visual<'_>)]) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Numerics(NumericsError::EmptyMask));
        }
        let mut total: Option<Var> = None;
        for (seq, vis) in batch {
            let mem = self.visual(tape, *vis)?;
            let l = self.sequence_loss(tape, seq, mem)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        Ok(tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64))
    }

    /// Batch loss value without keeping the graph.
    pub fn nle_loss(&self, batch: &[(&Sequence, Visual<'_>)]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let l = self.batch_loss(&mut tape, batch)?;
        Ok(tape.scalar(l))
    }

    /// Summary vector `s` and weights `α` of the concept head.
    pub fn concept_summary(&self, features: &GridFeatures) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.concepts.summarize(&self.params, features)
    }

    /// Top `k` concepts by sigmoid score, ties to the lower id.
    pub fn detect_concepts(&self, features: &GridFeatures, k: usize) -> Result<Vec<(usize, f64)>, ModelError> {
        let n = self.concepts.num_concepts();
        if k > n {
            return Err(ModelError::TooManyConcepts { k, n });
        }
        top_k(&self.concepts.scores(&self.params, features)?, k)
    }
}

/// Next-token targets and mask: row `t` predicts token `t + 1` and is
/// supervised when that token is. The last row is never supervised.
pub fn shifted_targets(seq: &Sequence) -> (Vec<usize>, Vec<bool>) {
    let l = seq.len();
    let mut targets = Vec::with_capacity(l);
    let mut mask = Vec::with_capacity(l);
    for t in 0..l {
        if t + 1 < l {
            targets.push(seq.token_ids[t + 1]);
            mask.push(seq.loss_mask[t + 1]);
        } else {
            targets.push(0);
            mask.push(false);
        }
    }
    (targets, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{assemble_nle_sequence, Prompt, Vocabulary};
    use crate::vision::VisionConfig;

    fn setup() -> (Vocabulary, NlxModel) {
        let vocab = Vocabulary::build(
            &["what color is the square ? red because the square is red", "obj1 obj2 person1 person2 blue"],
            1,
        )
        .unwrap();
        let mut cfg = NlxConfig::small(vocab.len(), 5);
        cfg.dim = 16;
        cfg.ff_dim = 32;
        cfg.heads = 2;
        cfg.vision = VisionConfig { image_width: 8, image_height: 8, patch: 4, dim: 8, layers: 1, heads: 2, ff_dim: 16 };
        (vocab, NlxModel::new(cfg, 1).unwrap())
    }

    fn features(seed: f64) -> GridFeatures {
        let data = (0..32).map(|i| libm::sin(i as f64 * 0.37 + seed)).collect();
        GridFeatures::new(Tensor::new(alloc::vec![4, 8], data).unwrap(), (2, 2)).unwrap()
    }

    fn logits(model: &NlxModel, seq: &Sequence, f: &GridFeatures) -> Tensor {
        let mut tape = Tape::new();
        let m = model.visual(&mut tape, Visual::Features(f)).unwrap();
        let out = model.forward(&mut tape, seq, m).unwrap();
        tape.to_tensor(out.logits)
    }

    #[test]
    fn causality_is_exact() {
        let (v, m) = setup();
        let seq = assemble_nle_sequence(&v, &Prompt::question("what color is the square?"), "red", "the square is red", 40).unwrap();
        let f = features(0.0);
        let base = logits(&m, &seq, &f);
        let t = 7;
        let mut changed = seq.clone();
        for id in changed.token_ids[t + 1..].iter_mut() {
            *id = v.id("blue").unwrap();
        }
        let other = logits(&m, &changed, &f);
        let w = base.cols();
        assert_eq!(&base.data()[..(t + 1) * w], &other.data()[..(t + 1) * w]);
        assert_ne!(base.data(), other.data());
    }

    #[test]
    fn visual_memory_is_live() {
        let (v, m) = setup();
        let seq = assemble_nle_sequence(&v, &Prompt::question("what color is the square?"), "red", "the square is red", 40).unwrap();
        assert_ne!(logits(&m, &seq, &features(0.0)).data(), logits(&m, &seq, &features(1.0)).data());
    }

    #[test]
    fn segment_swap_is_additive() {
        let (v, m) = setup();
        let seq = assemble_nle_sequence(&v, &Prompt::question("what color is the square?"), "red", "the square is red", 40).unwrap();
        let mut swapped = seq.clone();
        swapped.segments[1] = Segment::Ans;
        let a = m.input_embeddings(&seq).unwrap();
        let b = m.input_embeddings(&swapped).unwrap();
        let table = m.params.value(m.token_embedding());
        let (qa, qq) = (table.row(segment_token(Segment::Ans)), table.row(segment_token(Segment::Ques)));
        for c in 0..a.cols() {
            let diff = b.row(1)[c] - a.row(1)[c];
            assert!((diff - (qa[c] - qq[c])).abs() < 1e-15);
        }
        for r in (0..a.rows()).filter(|&r| r != 1) {
            assert_eq!(a.row(r), b.row(r));
        }
    }

    #[test]
    fn untrained_loss_near_log_vocab() {
        let (v, m) = setup();
        let seq = assemble_nle_sequence(&v, &Prompt::question("what color is the square?"), "red", "the square is red", 40).unwrap();
        let f = features(0.3);
        let loss = m.nle_loss(&[(&seq, Visual::Features(&f))]).unwrap();
        let ln_v = libm::log(v.len() as f64);
        assert!((loss - ln_v).abs() < 0.1 * ln_v, "{loss} vs {ln_v}");
    }

    #[test]
    fn dropping_explanation_supervision_changes_loss() {
        let (v, m) = setup();
        let seq = assemble_nle_sequence(&v, &Prompt::question("what color is the square?"), "red", "the square is red", 40).unwrap();
        let mut answer_only = seq.clone();
        for (s, mask) in answer_only.segments.iter().zip(answer_only.loss_mask.iter_mut()) {
            if *s == Segment::Exp {
                *mask = false;
            }
        }
        assert!(answer_only.supervised() < seq.supervised());
        let f = features(0.3);
        let a = m.nle_loss(&[(&seq, Visual::Features(&f))]).unwrap();
        let b = m.nle_loss(&[(&answer_only, Visual::Features(&f))]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn over_long_sequence_rejected() {
        let (v, m) = setup();
        let mut seq = assemble_nle_sequence(&v, &Prompt::question("what color is the square?"), "red", "the square is red", 40).unwrap();
        let max = m.config().max_positions;
        seq.position_ids = (0..seq.len()).map(|i| i + max).collect();
        assert!(matches!(m.input_embeddings(&seq), Err(ModelError::TooLong { .. })));
    }

    #[test]
    fn segment_markers_round_trip() {
        for s in Segment::ALL {
            assert_eq!(segment_from_token(segment_token(s)).unwrap(), s);
        }
        let noj = SPECIALS.iter().position(|&s| s == crate::tokenizer::NOJ).unwrap();
        assert!(segment_from_token(noj).is_err());
    }

    #[test]
    fn checkpoint_parts_round_trip() {
        let (_, m) = setup();
        let again = NlxModel::from_parts(m.config().clone(), &m.params).unwrap();
        assert_eq!(again.params.fingerprint(), m.params.fingerprint());
        let mut extra = m.params.clone();
        extra.add_filled("stray", &[1], 0.0).unwrap();
        assert!(NlxModel::from_parts(m.config().clone(), &extra).is_err());
    }

    #[test]
    fn k_above_n_is_an_error() {
        let (_, m) = setup();
        assert!(matches!(m.detect_concepts(&features(0.0), 6), Err(ModelError::TooManyConcepts { .. })));
        assert_eq!(m.detect_concepts(&features(0.0), 5).unwrap().len(), 5);
    }
}

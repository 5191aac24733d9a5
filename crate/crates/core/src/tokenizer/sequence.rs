use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::vocab::{ANS, CONCEPT, EXP, OBJ, PAD, QUES};
use super::{TokenizerError, Vocabulary};
use crate::model::{bbox_features, ObjectInput};

/// At most this many concepts are placed in the input prefix.
pub const MAX_CONCEPTS: usize = 15;
/// At most this many object slots are placed in the input prefix.
pub const MAX_OBJECTS: usize = 20;

/// Which part of the input a token belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Ques,
    Ans,
    Exp,
    Concept,
    Obj,
    Pad,
}

impl Segment {
    pub const ALL: [Segment; 6] = [Segment::Ques, Segment::Ans, Segment::Exp, Segment::Concept, Segment::Obj, Segment::Pad];

    /// Marker token whose embedding encodes this segment.
    pub fn marker(self) -> &'static str {
        match self {
            Segment::Ques => QUES,
            Segment::Ans => ANS,
            Segment::Exp => EXP,
            Segment::Concept => CONCEPT,
            Segment::Obj => OBJ,
            Segment::Pad => PAD,
        }
    }

    pub fn from_marker_id(vocab: &Vocabulary, id: usize) -> Result<Self, TokenizerError> {
        Self::ALL
            .iter()
            .copied()
            .find(|s| vocab.id(s.marker()) == Some(id))
            .ok_or(TokenizerError::UnknownSegment(id))
    }
}

/// One model input: parallel token, segment, position, loss-mask and
/// object-reference tracks, plus box features for object slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub token_ids: Vec<usize>,
    pub segments: Vec<Segment>,
    pub position_ids: Vec<usize>,
    pub loss_mask: Vec<bool>,
    pub orn_ids: Vec<usize>,
    /// `(slot position, normalized 8-value box)` for each object slot.
    pub object_boxes: Vec<(usize, [f64; 8])>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn push(&mut self, token: usize, segment: Segment, supervised: bool, orn: usize) {
        self.position_ids.push(self.token_ids.len());
        self.token_ids.push(token);
        self.segments.push(segment);
        self.loss_mask.push(supervised);
        self.orn_ids.push(orn);
    }

    /// Position of the last `<bos>`, where generation starts.
    pub fn bos_index(&self, vocab: &Vocabulary) -> Option<usize> {
        self.token_ids.iter().rposition(|&t| t == vocab.bos())
    }

    /// Number of supervised target tokens.
    pub fn supervised(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    pub fn check(&self) -> Result<(), TokenizerError> {
        let l = self.token_ids.len();
        if [self.segments.len(), self.position_ids.len(), self.loss_mask.len(), self.orn_ids.len()]
            .iter()
            .any(|&x| x != l)
        {
            return Err(TokenizerError::Malformed("track lengths differ".into()));
        }
        if self.position_ids.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TokenizerError::Malformed("positions not increasing".into()));
        }
        for (i, (&m, s)) in self.loss_mask.iter().zip(&self.segments).enumerate() {
            if m && !matches!(s, Segment::Ans | Segment::Exp) {
                return Err(TokenizerError::Malformed(alloc::format!("supervised token {} in {:?}", i, s)));
            }
        }
        Ok(())
    }
}

/// Conditioning context shared by training and generation inputs.
#[derive(Clone, Copy, Debug)]
pub struct Prompt<'a> {
    pub question: &'a str,
    pub concepts: &'a [String],
    pub objects: &'a [ObjectInput],
    /// `(width, height)` of the image the object boxes refer to.
    pub image_size: (usize, usize),
}

impl<'a> Prompt<'a> {
    pub fn question(question: &'a str) -> Self {
        Self { question, concepts: &[], objects: &[], image_size: (1, 1) }
    }
}

/// Concept and object prefix, question, then `<bos>`.
fn assemble_prefix(vocab: &Vocabulary, prompt: &Prompt<'_>) -> Result<(Sequence, usize), TokenizerError> {
    let mut seq = Sequence {
        token_ids: Vec::new(),
        segments: Vec::new(),
        position_ids: Vec::new(),
        loss_mask: Vec::new(),
        orn_ids: Vec::new(),
        object_boxes: Vec::new(),
    };
    let noj = vocab.noj();
    for concept in prompt.concepts.iter().take(MAX_CONCEPTS) {
        for t in vocab.encode(concept) {
            seq.push(t, Segment::Concept, false, noj);
        }
    }
    let (w, h) = prompt.image_size;
    for obj in prompt.objects.iter().take(MAX_OBJECTS) {
        let features = bbox_features(&obj.bbox, w as f64, h as f64)
            .map_err(|e| TokenizerError::Malformed(alloc::format!("object box: {e}")))?;
        seq.object_boxes.push((seq.len(), features));
        seq.push(obj.label, Segment::Obj, false, obj.reference);
    }
    let prefix_len = seq.len();
    for t in vocab.encode(prompt.question) {
        seq.push(t, Segment::Ques, false, noj);
    }
    seq.push(vocab.bos(), Segment::Ans, false, noj);
    Ok((seq, prefix_len))
}

/// Input for generation: everything up to and including `<bos>`.
/// `cap` bounds the text part (question onwards).
pub fn assemble_prompt(vocab: &Vocabulary, prompt: &Prompt<'_>, cap: usize) -> Result<Sequence, TokenizerError> {
    let (seq, prefix) = assemble_prefix(vocab, prompt)?;
    if seq.len() - prefix > cap {
        return Err(TokenizerError::OverCap { field: "question", len: seq.len() - prefix, cap });
    }
    Ok(seq)
}

/// Training input: `[concepts][objects] question <bos> answer because explanation <eos>`.
///
/// `cap` bounds the text part; the explanation is cut from its end when the
/// text would exceed it. Structural tokens are never dropped.
pub fn assemble_nle_sequence(
    vocab: &Vocabulary,
    prompt: &Prompt<'_>,
    answer: &str,
    explanation: &str,
    cap: usize,
) -> Result<Sequence, TokenizerError> {
    let answer_ids = vocab.encode(answer);
    let mut expl_ids = vocab.encode(explanation);
    if answer_ids.is_empty() {
        return Err(TokenizerError::EmptyField("answer"));
    }
    if expl_ids.is_empty() {
        return Err(TokenizerError::EmptyField("explanation"));
    }
    let delimiter = vocab.delimiter()?;
    let (mut seq, prefix) = assemble_prefix(vocab, prompt)?;
    let question_part = seq.len() - prefix;
    // question + <bos>, answer, delimiter, at least one explanation token, <eos>
    let fixed = question_part + answer_ids.len() + 2;
    if question_part + 3 > cap {
        return Err(TokenizerError::OverCap { field: "question", len: question_part, cap });
    }
    if fixed + 1 > cap {
        return Err(TokenizerError::OverCap { field: "answer", len: answer_ids.len(), cap });
    }
    expl_ids.truncate(cap - fixed);
    let noj = vocab.noj();
    for t in answer_ids {
        seq.push(t, Segment::Ans, true, noj);
    }
    seq.push(delimiter, Segment::Exp, true, noj);
    for t in expl_ids {
        seq.push(t, Segment::Exp, true, noj);
    }
    seq.push(vocab.eos(), Segment::Exp, true, noj);
    Ok(seq)
}

/// Caption-pretraining input: `<bos> caption <eos>`, all supervised.
pub fn assemble_caption_sequence(vocab: &Vocabulary, caption: &str, cap: usize) -> Result<Sequence, TokenizerError> {
    let mut ids = vocab.encode(caption);
    if ids.is_empty() {
        return Err(TokenizerError::EmptyField("caption"));
    }
    if cap < 3 {
        return Err(TokenizerError::OverCap { field: "caption", len: ids.len(), cap });
    }
    ids.truncate(cap - 2);
    let noj = vocab.noj();
    let mut seq = Sequence {
        token_ids: Vec::new(),
        segments: Vec::new(),
        position_ids: Vec::new(),
        loss_mask: Vec::new(),
        orn_ids: Vec::new(),
        object_boxes: Vec::new(),
    };
    seq.push(vocab.bos(), Segment::Exp, false, noj);
    for t in ids {
        seq.push(t, Segment::Exp, true, noj);
    }
    seq.push(vocab.eos(), Segment::Exp, true, noj);
    Ok(seq)
}

/// Answer and explanation recovered from generated tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGeneration {
    pub answer: String,
    pub explanation: String,
    /// False when the delimiter was missing.
    pub parsed: bool,
}

/// Splits tokens generated after `<bos>` on the first delimiter; stops at `<eos>`.
pub fn parse_generation(vocab: &Vocabulary, ids: &[usize]) -> Result<ParsedGeneration, TokenizerError> {
    let end = ids.iter().position(|&t| t == vocab.eos()).unwrap_or(ids.len());
    let body = &ids[..end];
    let delimiter = vocab.id(super::vocab::DELIMITER);
    match delimiter.and_then(|d| body.iter().position(|&t| t == d)) {
        Some(split) => Ok(ParsedGeneration {
            answer: vocab.decode(&body[..split])?,
            explanation: vocab.decode(&body[split + 1..])?,
            parsed: true,
        }),
        None => Ok(ParsedGeneration { answer: vocab.decode(body)?, explanation: String::new(), parsed: false }),
    }
}

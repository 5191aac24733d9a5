//! Vocabulary, text ↔ id mapping and assembly of multi-segment sequences.

mod sequence;
mod vocab;

use alloc::string::String;

pub use sequence::{
    assemble_caption_sequence, assemble_nle_sequence, assemble_prompt, parse_generation, ParsedGeneration, Prompt,
    Segment, Sequence, MAX_CONCEPTS, MAX_OBJECTS,
};
pub use vocab::{
    normalize, tokenize, VocabEntry, VocabFile, Vocabulary, ANS, BOS, CLS, CONCEPT, DELIMITER, EOS, EXP, NOJ, OBJ, PAD,
    QUES, SEP, SPECIALS, UNK,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown token id {0}")]
    UnknownId(usize),
    #[error("token id {0} is not a segment marker")]
    UnknownSegment(usize),
    #[error("vocabulary has no delimiter token")]
    MissingDelimiter,
    #[error("{0} is empty")]
    EmptyField(&'static str),
    #[error("{field} does not fit: length {len}, cap {cap}")]
    OverCap { field: &'static str, len: usize, cap: usize },
    #[error("malformed sequence: {0}")]
    Malformed(String),
    #[error("vocabulary file: {0}")]
    Format(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, ObjectInput};
    use alloc::string::ToString;
    use alloc::vec::Vec;

    fn vocab() -> Vocabulary {
        Vocabulary::build(
            &["is it day ? no because the sky is dark", "red blue green square circle obj1 obj2 a b c yellow"],
            1,
        )
        .unwrap()
    }

    #[test]
    fn plain_layout_and_mask() {
        let v = vocab();
        let seq = assemble_nle_sequence(&v, &Prompt::question("is it day?"), "no", "the sky is dark", 40).unwrap();
        seq.check().unwrap();
        use Segment::*;
        assert_eq!(&seq.segments[..6], &[Ques, Ques, Ques, Ques, Ans, Ans]);
        assert_eq!(seq.token_ids[4], v.bos());
        assert_eq!(seq.token_ids[6], v.delimiter().unwrap());
        assert!(seq.segments[6..].iter().all(|&s| s == Exp));
        assert!(seq.loss_mask[..5].iter().all(|&m| !m));
        assert!(seq.loss_mask[5..].iter().all(|&m| m));
        assert_eq!(*seq.token_ids.last().unwrap(), v.eos());
        assert_eq!(seq.position_ids, (0..seq.len()).collect::<Vec<_>>());
        assert!(seq.orn_ids.iter().all(|&o| o == v.noj()));
    }

    #[test]
    fn concepts_truncated_to_fifteen_in_order() {
        let v = vocab();
        let concepts: Vec<String> = (0..17).map(|i| ["red", "blue", "green"][i % 3].to_string()).collect();
        let prompt = Prompt { concepts: &concepts, ..Prompt::question("is it day?") };
        let seq = assemble_nle_sequence(&v, &prompt, "no", "the sky is dark", 40).unwrap();
        let kept: Vec<usize> = seq
            .token_ids
            .iter()
            .zip(&seq.segments)
            .filter(|(_, s)| **s == Segment::Concept)
            .map(|(t, _)| *t)
            .collect();
        assert_eq!(kept.len(), MAX_CONCEPTS);
        let expected: Vec<usize> = concepts[..15].iter().map(|c| v.id(c).unwrap()).collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn empty_prefixes_match_plain_layout() {
        let v = vocab();
        let plain = assemble_nle_sequence(&v, &Prompt::question("is it day?"), "no", "the sky is dark", 40).unwrap();
        let prompt = Prompt { question: "is it day?", concepts: &[], objects: &[], image_size: (32, 32) };
        let with = assemble_nle_sequence(&v, &prompt, "no", "the sky is dark", 40).unwrap();
        assert_eq!(plain, with);
    }

    #[test]
    fn objects_fill_slots_with_references() {
        let v = vocab();
        let objects = [
            ObjectInput { label: v.id("square").unwrap(), reference: v.id("obj1").unwrap(), bbox: BBox::new(0.0, 0.0, 8.0, 8.0) },
            ObjectInput { label: v.id("square").unwrap(), reference: v.id("obj2").unwrap(), bbox: BBox::new(8.0, 8.0, 16.0, 16.0) },
        ];
        let prompt = Prompt { question: "is it day?", concepts: &[], objects: &objects, image_size: (32, 32) };
        let seq = assemble_nle_sequence(&v, &prompt, "no", "a", 40).unwrap();
        assert_eq!(&seq.segments[..2], &[Segment::Obj, Segment::Obj]);
        assert_eq!(seq.orn_ids[0], v.id("obj1").unwrap());
        assert_eq!(seq.orn_ids[2], v.noj());
        assert_eq!(seq.object_boxes.len(), 2);
        assert_eq!(seq.object_boxes[1].0, 1);
    }

    #[test]
    fn over_cap_truncates_explanation_then_errors() {
        let v = vocab();
        // question(4)+bos+answer(1)+because+eos = 8; cap 10 leaves 2 explanation tokens
        let seq = assemble_nle_sequence(&v, &Prompt::question("is it day?"), "no", "the sky is dark", 10).unwrap();
        assert_eq!(seq.len(), 10);
        assert_eq!(*seq.token_ids.last().unwrap(), v.eos());
        assert!(seq.token_ids.contains(&v.delimiter().unwrap()));
        let err = assemble_nle_sequence(&v, &Prompt::question("is it day?"), "no a b c", "x", 10).unwrap_err();
        assert!(matches!(err, TokenizerError::OverCap { field: "answer", .. }));
        let err = assemble_nle_sequence(&v, &Prompt::question("is it day? is it day?"), "no", "x", 8).unwrap_err();
        assert!(matches!(err, TokenizerError::OverCap { field: "question", .. }));
    }

    #[test]
    fn parse_examples() {
        let v = vocab();
        let ids = |s: &str| v.encode(s);
        let mut g = ids("no because the sky is dark");
        g.push(v.eos());
        let p = parse_generation(&v, &g).unwrap();
        assert_eq!((p.answer.as_str(), p.explanation.as_str(), p.parsed), ("no", "the sky is dark", true));

        let mut g = ids("yellow");
        g.push(v.eos());
        let p = parse_generation(&v, &g).unwrap();
        assert_eq!((p.answer.as_str(), p.explanation.as_str(), p.parsed), ("yellow", "", false));

        let p = parse_generation(&v, &ids("a because b because c")).unwrap();
        assert_eq!((p.answer.as_str(), p.explanation.as_str()), ("a", "b because c"));
    }

    #[test]
    fn unknown_segment_marker() {
        let v = vocab();
        assert_eq!(Segment::from_marker_id(&v, v.id(QUES).unwrap()), Ok(Segment::Ques));
        assert!(Segment::from_marker_id(&v, v.bos()).is_err());
    }

    #[test]
    fn caption_layout() {
        let v = vocab();
        let seq = assemble_caption_sequence(&v, "a red square", 70).unwrap();
        assert_eq!(seq.token_ids[0], v.bos());
        assert!(!seq.loss_mask[0]);
        assert_eq!(seq.supervised(), 4);
    }
}

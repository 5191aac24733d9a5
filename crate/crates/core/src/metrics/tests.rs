use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::data::{NleExample, PredictionRecord, Task};
use crate::tokenizer::tokenize;

fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}

#[test]
fn bleu_identity_and_clipping() {
    let h = vec![toks("the cat sat on the mat")];
    let r = vec![vec![toks("the cat sat on the mat")]];
    assert_eq!(bleu(&h, &r, 4).unwrap(), [1.0; 4]);
    let h = vec![toks("the the the the")];
    let r = vec![vec![toks("the cat")]];
    assert_eq!(bleu(&h, &r, 1).unwrap()[0], 0.25);
}

#[test]
fn bleu_empty_hypothesis_is_zero_not_error() {
    let h = vec![Vec::new(), toks("a b")];
    let r = vec![vec![toks("a b")], vec![toks("a b")]];
    let s = bleu(&h, &r, 2).unwrap();
    assert!(s[0] < 1.0 && s[0] > 0.0);
}

#[test]
fn rouge_examples() {
    assert_eq!(rouge_l(&toks("a b c"), &[toks("a b c")]), 1.0);
    assert!((rouge_l(&toks("a b c d"), &[toks("a c b d")]) - 0.75).abs() < 1e-15);
    assert_eq!(rouge_l(&toks("a b"), &[toks("c d")]), 0.0);
}

#[test]
fn cider_single_image_is_degenerate() {
    let c = cider(&[toks("a red square")], &[vec![toks("a red square")]]).unwrap();
    assert_eq!(c.score, 0.0);
    assert!(c.degenerate);
}

#[test]
fn cider_identity_on_disjoint_references() {
    let h = vec![toks("a red square on top"), toks("the blue circle is here")];
    let r = vec![vec![toks("a red square on top")], vec![toks("the blue circle is here")]];
    let c = cider(&h, &r).unwrap();
    // Every n-gram occurs in exactly one image, so each cosine is 1.
    assert!((c.score - 10.0).abs() < 1e-12);
    // Two-token sentences have no 3- or 4-grams: the maximum drops to half.
    let h = vec![toks("red square"), toks("blue circle")];
    let r = vec![vec![toks("red square")], vec![toks("blue circle")]];
    assert!((cider(&h, &r).unwrap().score - 5.0).abs() < 1e-12);
}

#[test]
fn embed_sim_identity_and_orthogonal() {
    let mut t = EmbeddingTable::new(2);
    t.insert("a", vec![1.0, 0.0]);
    t.insert("b", vec![0.0, 1.0]);
    assert_eq!(embed_sim_score(&toks("a b"), &toks("a b"), &t).f1, 1.0);
    assert_eq!(embed_sim_score(&toks("a"), &toks("b"), &t).f1, 0.0);
    let fallback = EmbeddingTable::new(8);
    assert_eq!(embed_sim_score(&toks("x y z"), &toks("x y z"), &fallback).f1, 1.0);
    assert!(embed_sim_score(&[], &toks("a"), &t).empty);
}

#[test]
fn concept_accuracy_examples() {
    assert_eq!(concept_accuracy_at_k(&[vec![1, 2]], &[vec![1, 2, 3]], 2).unwrap(), 1.0);
    assert_eq!(concept_accuracy_at_k(&[vec![4, 5]], &[vec![1, 2, 3]], 2).unwrap(), 0.0);
    assert!((concept_accuracy_at_k(&[vec![1, 2, 3, 8, 9]], &[vec![1, 2, 3]], 5).unwrap() - 0.6).abs() < 1e-15);
    assert!(concept_accuracy_at_k(&[vec![1, 1]], &[vec![1]], 2).is_err());
    assert!(concept_accuracy_at_k(&[vec![1]], &[vec![1]], 2).is_err());
}

fn example(id: &str, answer: &str, expl: &str) -> NleExample {
    NleExample {
        id: id.into(),
        task: Task::Vqa,
        image: "img".into(),
        question: "what color?".into(),
        answers: vec![answer.into()],
        explanations: vec![expl.into()],
        concepts: None,
        objects: None,
    }
}

fn pred(id: &str, answer: &str, expl: &str) -> PredictionRecord {
    PredictionRecord { id: id.into(), answer: answer.into(), explanation: expl.into(), parsed: true }
}

#[test]
fn filtered_and_unfiltered_protocol() {
    let data = vec![example("1", "red", "the square is red"), example("2", "blue", "the circle is blue")];
    let right = vec![pred("1", "red", "the square is red"), pred("2", "blue", "a circle is blue")];
    let u = evaluate_nle(&right, &data, EvalMode::Unfiltered, AnswerRule::SetMembership, None).unwrap();
    let f = evaluate_nle(&right, &data, EvalMode::Filtered, AnswerRule::SetMembership, None).unwrap();
    assert_eq!((u.bleu_4, u.rouge_l, u.cider), (f.bleu_4, f.rouge_l, f.cider));
    let wrong = vec![pred("1", "green", "x"), pred("2", "green", "y")];
    let f = evaluate_nle(&wrong, &data, EvalMode::Filtered, AnswerRule::SetMembership, None).unwrap();
    assert_eq!(f.n_kept, 0);
    assert_eq!(f.bleu_1, None);
    assert_eq!(f.meteor, None);
}

#[test]
fn missing_and_unknown_predictions_error() {
    let data = vec![example("1", "red", "r"), example("2", "blue", "b")];
    let err = task_accuracy(&[pred("1", "red", "")], &data, AnswerRule::SetMembership).unwrap_err();
    assert_eq!(err, MetricsError::MissingPredictions(vec!["2".into()]));
    let err = task_accuracy(&[pred("9", "red", "")], &data, AnswerRule::SetMembership).unwrap_err();
    assert_eq!(err, MetricsError::UnknownId("9".into()));
}

#[test]
fn similarity_threshold_is_inclusive() {
    // Precision 1 and recall r give F1 = 2r/(1+r); r = 0.92/1.08 hits 0.92.
    let mut t = EmbeddingTable::new(2);
    t.insert("a", vec![1.0, 0.0]);
    t.insert("b", vec![0.0, 1.0]);
    let data = vec![example("1", "a", "e")];
    let p = vec![pred("1", "a", "e")];
    let rule = AnswerRule::Similarity { threshold: 1.0, encoder: &t };
    assert_eq!(task_accuracy(&p, &data, rule).unwrap().accuracy, 1.0);
    let s = embed_sim_score(&toks("a"), &toks("a b"), &t);
    let at = AnswerRule::Similarity { threshold: s.f1, encoder: &t };
    assert!(at.is_correct("a", &["a b".into()]));
    let above = AnswerRule::Similarity { threshold: s.f1 + 1e-12, encoder: &t };
    assert!(!above.is_correct("a", &["a b".into()]));
}

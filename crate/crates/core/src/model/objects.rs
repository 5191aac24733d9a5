use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tokenizer::{Segment, Sequence, Vocabulary};

/// Pixel-space box, `0 ≤ x1 < x2 ≤ W`, `0 ≤ y1 < y2 ≤ H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// One detected object placed in the input prefix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectInput {
    /// Token id of the object's class label.
    pub label: usize,
    /// Token id of the reference name the text uses for it (e.g. `obj2`).
    pub reference: usize,
    pub bbox: BBox,
}

/// The 8-value normalized box encoding:
/// corners, center and extent, each divided by the image width or height.
pub fn bbox_features(b: &BBox, width: f64, height: f64) -> Result<[f64; 8], ModelError> {
    let ordered = 0.0 <= b.x1 && b.x1 < b.x2 && b.x2 <= width && 0.0 <= b.y1 && b.y1 < b.y2 && b.y2 <= height;
    if !ordered || !(width > 0.0 && height > 0.0) {
        return Err(ModelError::DegenerateBox(b.to_array()));
    }
    Ok([
        b.x1 / width,
        b.y1 / height,
        b.x2 / width,
        b.y2 / height,
        (b.x1 + b.x2) / (2.0 * width),
        (b.y1 + b.y2) / (2.0 * height),
        (b.x2 - b.x1) / width,
        (b.y2 - b.y1) / height,
    ])
}

/// Whether a token looks like an object reference (`person1`, `obj12`):
/// letters followed by at least one digit.
pub fn is_reference_token(token: &str) -> bool {
    let split = token.find(|c: char| c.is_ascii_digit());
    match split {
        Some(i) if i > 0 => {
            token[..i].chars().all(|c| c.is_ascii_alphabetic()) && token[i..].chars().all(|c| c.is_ascii_digit())
        }
        _ => false,
    }
}

/// Positions of text tokens that name an object reference absent from the
/// sequence's object slots. Such tokens are kept; this only reports them.
pub fn dangling_references(vocab: &Vocabulary, seq: &Sequence) -> Vec<usize> {
    let present: Vec<usize> = seq
        .segments
        .iter()
        .zip(&seq.orn_ids)
        .filter(|(s, _)| **s == Segment::Obj)
        .map(|(_, &o)| o)
        .collect();
    seq.token_ids
        .iter()
        .zip(&seq.segments)
        .enumerate()
        .filter(|(_, (_, s))| **s != Segment::Obj)
        .filter(|(_, (&t, _))| vocab.token(t).is_some_and(is_reference_token) && !present.contains(&t))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_image_box() {
        let f = bbox_features(&BBox::new(0.0, 0.0, 64.0, 48.0), 64.0, 48.0).unwrap();
        assert_eq!(f, [0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn substituted_box() {
        let f = bbox_features(&BBox::new(10.0, 20.0, 30.0, 60.0), 100.0, 100.0).unwrap();
        assert_eq!(f, [0.1, 0.2, 0.3, 0.6, 0.2, 0.4, 0.2, 0.4]);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(bbox_features(&BBox::new(5.0, 0.0, 5.0, 10.0), 10.0, 10.0).is_err());
        assert!(bbox_features(&BBox::new(0.0, 4.0, 5.0, 4.0), 10.0, 10.0).is_err());
        assert!(bbox_features(&BBox::new(0.0, 0.0, 11.0, 10.0), 10.0, 10.0).is_err());
        assert!(bbox_features(&BBox::new(-1.0, 0.0, 5.0, 10.0), 10.0, 10.0).is_err());
    }

    #[test]
    fn reference_tokens() {
        assert!(is_reference_token("person1"));
        assert!(is_reference_token("obj12"));
        assert!(!is_reference_token("obj"));
        assert!(!is_reference_token("12"));
        assert!(!is_reference_token("a1b"));
    }
}

//! Dense arithmetic, reverse-mode differentiation and the layer primitives
//! the rest of the crate is built from.
//!
//! All arithmetic is `f64` with a fixed loop order, so a given build produces
//! bit-identical results for identical inputs.

mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

use alloc::string::String;

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckEntry, GradCheckReport};
pub use layers::{FeedForward, LayerNormParams, Linear, MultiHeadAttention, INIT_STD};
pub use params::{ParamId, Parameter, ParameterStore};
pub use tape::{AttentionMask, Gradients, Tape, Var};
pub use tensor::{cosine, l2_norm, log_sum_exp, sigmoid, softmax_in_place, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("loss mask selects no tokens")]
    EmptyMask,
    #[error("target {0} outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("attention query row {0} has every key masked")]
    FullyMaskedRow(usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("loss function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
}

/// Mean token negative log-likelihood over the masked-in rows of `logits`.
pub fn cross_entropy_loss(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<f64, NumericsError> {
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let loss = tape.cross_entropy(l, targets, mask)?;
    Ok(tape.scalar(loss))
}

/// Summed multi-label binary cross-entropy between `sigmoid(logits)` and `targets`.
pub fn binary_cross_entropy_multilabel(logits: &Tensor, targets: &Tensor) -> Result<f64, NumericsError> {
    if logits.shape() != targets.shape() {
        return Err(NumericsError::Shape(alloc::format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let loss = tape.bce_with_logits(l, targets.data())?;
    Ok(tape.scalar(loss))
}

/// Standardizes each row of `x` over its last axis and applies `gain`/`bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor, NumericsError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(gain);
    let b = tape.constant(bias);
    let y = tape.layer_norm(xv, g, b, eps)?;
    Tensor::new(x.shape().to_vec(), tape.value(y).to_vec())
}

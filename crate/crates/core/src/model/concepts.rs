use alloc::vec::Vec;

use rand::Rng;

use super::ModelError;
use crate::numerics::{LayerNormParams, Linear, ParamId, ParameterStore, Tape, Tensor, Var, INIT_STD};
use crate::vision::GridFeatures;

pub const CONCEPT_PREFIX: &str = "concepts.";

/// Attention-summary pooling over patch features followed by a multi-label
/// classifier.
///
/// `V = LayerNorm(X + W2·relu(W1·X))`, `α = softmax_i(w_x·v_i)`,
/// `s = Σ α_i x_i`, logits `= C·s`.
#[derive(Clone, Copy, Debug)]
pub struct ConceptHead {
    mlp_in: Linear,
    mlp_out: Linear,
    norm: LayerNormParams,
    summary: ParamId,
    classifier: Linear,
    num_concepts: usize,
}

/// Tape nodes of one concept-head pass.
#[derive(Clone, Copy, Debug)]
pub struct ConceptNodes {
    /// `1 × Y` summary weights.
    pub alpha: Var,
    /// `1 × d` pooled feature.
    pub summary: Var,
    /// `1 × N` classifier logits.
    pub logits: Var,
}

impl ConceptHead {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        dim: usize,
        hidden: usize,
        num_concepts: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let p = CONCEPT_PREFIX;
        Ok(Self {
            mlp_in: Linear::new(store, &alloc::format!("{p}mlp_in"), dim, hidden, rng)?,
            mlp_out: Linear::new(store, &alloc::format!("{p}mlp_out"), hidden, dim, rng)?,
            norm: LayerNormParams::new(store, &alloc::format!("{p}norm"), dim)?,
            summary: store.add_normal(&alloc::format!("{p}summary"), &[dim, 1], INIT_STD, rng)?,
            classifier: Linear::new(store, &alloc::format!("{p}classifier"), dim, num_concepts, rng)?,
            num_concepts,
        })
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn summary_weight(&self) -> ParamId {
        self.summary
    }

    /// Records the head over the `Y × d` feature node `x`.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<ConceptNodes, ModelError> {
        let h = self.mlp_in.forward(tape, store, x)?;
        let h = tape.relu(h);
        let m = self.mlp_out.forward(tape, store, h)?;
        let r = tape.add(x, m)?;
        let v = self.norm.forward(tape, store, r)?;
        let w = tape.param(store, self.summary);
        let scores = tape.matmul(v, w)?;
        let scores = tape.transpose(scores);
        let alpha = tape.softmax_rows(scores);
        let summary = tape.matmul(alpha, x)?;
        let logits = self.classifier.forward(tape, store, summary)?;
        Ok(ConceptNodes { alpha, summary, logits })
    }

    /// `(s, α)` for one image's features.
    pub fn summarize(&self, store: &ParameterStore, features: &GridFeatures) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(features.tensor());
        let nodes = self.forward(&mut tape, store, x)?;
        Ok((tape.value(nodes.summary).to_vec(), tape.value(nodes.alpha).to_vec()))
    }

    /// Sigmoid score per concept.
    pub fn scores(&self, store: &ParameterStore, features: &GridFeatures) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(features.tensor());
        let nodes = self.forward(&mut tape, store, x)?;
        Ok(tape.value(nodes.logits).iter().map(|&l| crate::numerics::sigmoid(l)).collect())
    }

    /// Summed binary cross-entropy against a multi-hot target.
    pub fn loss(&self, tape: &mut Tape, store: &ParameterStore, x: Var, target: &[f64]) -> Result<Var, ModelError> {
        if target.len() != self.num_concepts {
            return Err(ModelError::Config(alloc::format!(
                "concept target of length {} for {} concepts",
                target.len(),
                self.num_concepts
            )));
        }
        let nodes = self.forward(tape, store, x)?;
        Ok(tape.bce_with_logits(nodes.logits, target)?)
    }
}

/// Top `k` of `scores` as `(concept id, score)`, highest first, ties to the lower id.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<(usize, f64)>, ModelError> {
    if k > scores.len() {
        return Err(ModelError::TooManyConcepts { k, n: scores.len() });
    }
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Multi-hot vector of length `n` with ones at `ids`.
pub fn multi_hot(ids: &[usize], n: usize) -> Result<Tensor, ModelError> {
    let mut t = Tensor::zeros(&[1, n]);
    for &i in ids {
        if i >= n {
            return Err(ModelError::Config(alloc::format!("concept id {i} outside 0..{n}")));
        }
        t.data_mut()[i] = 1.0;
    }
    Ok(t)
}

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::cosine;

/// Maps a token sequence to one vector per token. Contextual encoders may
/// look at the whole sequence.
pub trait TokenEmbedder {
    fn embed_tokens(&self, tokens: &[String]) -> Vec<Vec<f64>>;
}

/// Static per-token vectors. Tokens missing from the table get a fixed
/// pseudo-random vector derived from their bytes, so no token maps to zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: BTreeMap::new() }
    }

    pub fn insert(&mut self, token: &str, v: Vec<f64>) {
        self.vectors.insert(String::from(token), v);
    }

    fn fallback(&self, token: &str) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        let mut block = 0u32;
        while out.len() < self.dim {
            let digest = Sha256::new().chain_update(token.as_bytes()).chain_update(block.to_le_bytes()).finalize();
            for pair in digest.chunks(2) {
                if out.len() == self.dim {
                    break;
                }
                let v = u16::from_le_bytes([pair[0], pair[1]]) as f64 / 32767.5 - 1.0;
                out.push(v);
            }
            block += 1;
        }
        out
    }
}

impl TokenEmbedder for EmbeddingTable {
    fn embed_tokens(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        tokens.iter().map(|t| self.vectors.get(t).cloned().unwrap_or_else(|| self.fallback(t))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when either side had no tokens; all three scores are then 0.
    pub empty: bool,
}

/// Greedy-matching similarity: each hypothesis token takes its best cosine
/// against the reference tokens (precision) and vice versa (recall).
pub fn embed_sim_score(hypothesis: &[String], reference: &[String], encoder: &dyn TokenEmbedder) -> SimScore {
    if hypothesis.is_empty() || reference.is_empty() {
        return SimScore { precision: 0.0, recall: 0.0, f1: 0.0, empty: true };
    }
    let h = encoder.embed_tokens(hypothesis);
    let r = encoder.embed_tokens(reference);
    let sims: Vec<Vec<f64>> = h.iter().map(|a| r.iter().map(|b| cosine(a, b)).collect()).collect();
    let precision = sims.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / h.len() as f64;
    let recall = (0..r.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / r.len() as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    SimScore { precision, recall, f1, empty: false }
}

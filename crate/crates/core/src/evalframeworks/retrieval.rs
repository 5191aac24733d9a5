use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EvalFrameworkError, SentenceEncoder};
use crate::numerics::{cosine, l2_norm};

/// Gallery of named vectors searched by cosine similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

fn check_vector(id: &str, v: &[f64]) -> Result<(), EvalFrameworkError> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(EvalFrameworkError::ZeroNorm(id.into()));
    }
    Ok(())
}

impl RetrievalIndex {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self, EvalFrameworkError> {
        let Some(dim) = entries.first().map(|e| e.1.len()) else {
            return Err(EvalFrameworkError::Empty("gallery"));
        };
        let mut seen = BTreeSet::new();
        for (id, v) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(EvalFrameworkError::DuplicateId(id.clone()));
            }
            if v.len() != dim {
                return Err(EvalFrameworkError::Dimension { expected: dim, got: v.len() });
            }
            check_vector(id, v)?;
        }
        let (ids, vectors) = entries.into_iter().unzip();
        Ok(Self { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Top `k` gallery entries by cosine, ties to the lexicographically lowest
    /// id. `exclude` removes the query's own entry when it is in the gallery.
    pub fn retrieve_topk(&self, query: &[f64], k: usize, exclude: Option<&str>) -> Result<Vec<Hit>, EvalFrameworkError> {
        if query.len() != self.dim() {
            return Err(EvalFrameworkError::Dimension { expected: self.dim(), got: query.len() });
        }
        check_vector(exclude.unwrap_or("query"), query)?;
        let mut hits: Vec<Hit> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .filter(|(id, _)| Some(id.as_str()) != exclude)
            .map(|(id, v)| Hit { id: id.clone(), score: cosine(query, v) })
            .collect();
        if k == 0 || k > hits.len() {
            return Err(EvalFrameworkError::NotEnoughItems { k, available: hits.len() });
        }
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        hits.truncate(k);
        Ok(hits)
    }
}

/// How the summed pairwise similarities are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the K(K-1)/2 pairs, giving a mean in [0, 1].
    #[default]
    PairCount,
    /// Divide by K as literally written in the original formula; can exceed 1.
    PerItem,
}

/// Average clamped cosine over the strictly upper triangle of the gram matrix
/// of the row-normalized vectors.
pub fn s_avg(vectors: &[Vec<f64>], norm: Normalization) -> Result<f64, EvalFrameworkError> {
    let k = vectors.len();
    if k < 2 {
        return Err(EvalFrameworkError::TooFewItems(k));
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != vectors[0].len() {
            return Err(EvalFrameworkError::Dimension { expected: vectors[0].len(), got: v.len() });
        }
        check_vector(&alloc::format!("item {i}"), v)?;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += cosine(&vectors[i], &vectors[j]).max(0.0);
        }
    }
    Ok(match norm {
        Normalization::PairCount => total / (k * (k - 1) / 2) as f64,
        Normalization::PerItem => total / k as f64,
    })
}

/// Encodes each explanation and scores their mutual similarity.
pub fn intra_distance<S: AsRef<str>>(
    explanations: &[S],
    encoder: &dyn SentenceEncoder,
    norm: Normalization,
) -> Result<f64, EvalFrameworkError> {
    let vectors: Vec<Vec<f64>> = explanations.iter().map(|e| encoder.encode(e.as_ref())).collect();
    s_avg(&vectors, norm)
}

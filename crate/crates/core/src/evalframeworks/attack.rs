use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{intra_distance, EvalFrameworkError, Normalization, RetrievalIndex, SentenceEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Fix a question, retrieve images.
    Text,
    /// Fix an image, retrieve questions.
    Image,
}

impl core::str::FromStr for Axis {
    type Err = EvalFrameworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Axis::Text),
            "image" => Ok(Axis::Image),
            other => Err(EvalFrameworkError::UnknownAxis(other.into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackQuery {
    /// Question text on the text axis, image id on the image axis.
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedQuery {
    pub query_id: String,
    pub retrieved_ids: Vec<String>,
}

/// Retrieval results for every query, before any generation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackPlan {
    pub axis: Axis,
    pub k: usize,
    pub queries: Vec<PlannedQuery>,
    pub skipped: Vec<String>,
}

impl AttackPlan {
    /// `(question, image id)` for each query, in retrieval order.
    pub fn pairs_of(&self, q: &PlannedQuery) -> Vec<(String, String)> {
        q.retrieved_ids
            .iter()
            .map(|r| match self.axis {
                Axis::Text => (q.query_id.clone(), r.clone()),
                Axis::Image => (r.clone(), q.query_id.clone()),
            })
            .collect()
    }

    /// Every distinct `(question, image id)` the attack needs explained.
    pub fn distinct_pairs(&self) -> Vec<(String, String)> {
        let mut all: Vec<(String, String)> = self.queries.iter().flat_map(|q| self.pairs_of(q)).collect();
        all.sort();
        all.dedup();
        all
    }
}

/// Retrieves `k` gallery items per query. Queries with a zero vector or fewer
/// than `k` candidates are skipped and listed.
pub fn plan_attack(queries: &[AttackQuery], gallery: &RetrievalIndex, k: usize, axis: Axis) -> Result<AttackPlan, EvalFrameworkError> {
    if k < 2 {
        return Err(EvalFrameworkError::TooFewItems(k));
    }
    let mut plan = AttackPlan { axis, k, queries: Vec::new(), skipped: Vec::new() };
    for q in queries {
        match gallery.retrieve_topk(&q.vector, k, Some(&q.id)) {
            Ok(hits) => plan.queries.push(PlannedQuery {
                query_id: q.id.clone(),
                retrieved_ids: hits.into_iter().map(|h| h.id).collect(),
            }),
            Err(EvalFrameworkError::ZeroNorm(_) | EvalFrameworkError::NotEnoughItems { .. }) => plan.skipped.push(q.id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub retrieved_ids: Vec<String>,
    pub s_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub axis: Axis,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_queries: usize,
    pub n_skipped: usize,
    /// None when every query was skipped.
    pub mean_s_avg: Option<f64>,
    pub normalization: Normalization,
    pub per_query: Vec<QueryScore>,
}

/// Scores a plan given explanations for its `(question, image id)` pairs.
pub fn score_attack(
    plan: &AttackPlan,
    explanations: &BTreeMap<(String, String), String>,
    encoder: &dyn SentenceEncoder,
    norm: Normalization,
) -> Result<AttackReport, EvalFrameworkError> {
    let mut per_query = Vec::with_capacity(plan.queries.len());
    for q in &plan.queries {
        let texts = plan
            .pairs_of(q)
            .into_iter()
            .map(|p| explanations.get(&p).cloned().ok_or(EvalFrameworkError::MissingPrediction(p.0 + " @ " + &p.1)))
            .collect::<Result<Vec<String>, _>>()?;
        per_query.push(QueryScore {
            query_id: q.query_id.clone(),
            retrieved_ids: q.retrieved_ids.clone(),
            s_avg: intra_distance(&texts, encoder, norm)?,
        });
    }
    let mean = if per_query.is_empty() {
        None
    } else {
        Some(per_query.iter().map(|q| q.s_avg).sum::<f64>() / per_query.len() as f64)
    };
    Ok(AttackReport {
        axis: plan.axis,
        k: plan.k,
        n_queries: per_query.len(),
        n_skipped: plan.skipped.len(),
        mean_s_avg: mean,
        normalization: norm,
        per_query,
    })
}

/// Sequential plan, generate, score.
pub fn attack_suite<F>(
    queries: &[AttackQuery],
    gallery: &RetrievalIndex,
    k: usize,
    axis: Axis,
    mut explain: F,
    encoder: &dyn SentenceEncoder,
    norm: Normalization,
) -> Result<AttackReport, EvalFrameworkError>
where
    F: FnMut(&str, &str) -> Result<String, EvalFrameworkError>,
{
    let plan = plan_attack(queries, gallery, k, axis)?;
    let mut explanations = BTreeMap::new();
    for (q, img) in plan.distinct_pairs() {
        let e = explain(&q, &img)?;
        explanations.insert((q, img), e);
    }
    score_attack(&plan, &explanations, encoder, norm)
}

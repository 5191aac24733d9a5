use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ngram::ngram_counts;
use super::MetricsError;

pub const CIDER_MAX_N: usize = 4;
/// Multiplier applied to the mean cosine.
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiderScore {
    pub score: f64,
    pub per_sample: Vec<f64>,
    /// Set when the corpus has a single image, so every idf is zero.
    pub degenerate: bool,
    /// SHA-256 over the sorted idf table, hex.
    pub idf_fingerprint: String,
}

type Vector<'a> = BTreeMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &dyn Fn(&[String]) -> f64) -> Vector<'a> {
    ngram_counts(tokens, n).into_iter().map(|(g, c)| (g, c as f64 * idf(g))).collect()
}

fn cos(a: &Vector<'_>, b: &Vector<'_>) -> f64 {
    let dot: f64 = a.iter().map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0)).sum();
    let na: f64 = libm::sqrt(a.values().map(|x| x * x).sum());
    let nb: f64 = libm::sqrt(b.values().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Corpus consensus score with idf from the corpus's own reference sets:
/// per sample, the mean over n = 1..4 of the mean cosine between the
/// hypothesis and each reference tf-idf vector, times [`CIDER_SCALE`].
pub fn cider(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<CiderScore, MetricsError> {
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricsError::Mismatch { hypotheses: hypotheses.len(), references: references.len() });
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(MetricsError::NoReferences);
    }
    let images = references.len() as f64;
    let mut df: Vec<BTreeMap<&[String], usize>> = (0..CIDER_MAX_N).map(|_| BTreeMap::new()).collect();
    for refs in references {
        for n in 1..=CIDER_MAX_N {
            let grams: BTreeSet<&[String]> = refs.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            for g in grams {
                *df[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }
    let log_images = libm::log(images);
    let mut hasher = Sha256::new();
    for (n, table) in df.iter().enumerate() {
        for (g, &count) in table {
            hasher.update((n as u64 + 1).to_le_bytes());
            for w in g.iter() {
                hasher.update(w.as_bytes());
                hasher.update([0u8]);
            }
            hasher.update((log_images - libm::log(count as f64)).to_le_bytes());
        }
    }
    let idf_fingerprint = hasher.finalize().iter().map(|b| alloc::format!("{b:02x}")).collect();
    let mut per_sample = Vec::with_capacity(hypotheses.len());
    for (hyp, refs) in hypotheses.iter().zip(references) {
        let mut total = 0.0;
        for n in 1..=CIDER_MAX_N {
            let table = &df[n - 1];
            let idf = |g: &[String]| log_images - libm::log(table.get(g).copied().unwrap_or(0).max(1) as f64);
            let h = tfidf(hyp, n, &idf);
            let sum: f64 = refs.iter().map(|r| cos(&h, &tfidf(r, n, &idf))).sum();
            total += sum / refs.len() as f64;
        }
        per_sample.push(total / CIDER_MAX_N as f64 * CIDER_SCALE);
    }
    let score = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(CiderScore { score, per_sample, degenerate: references.len() == 1, idf_fingerprint })
}

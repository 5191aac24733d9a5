use alloc::string::String;
use alloc::vec::Vec;

use super::ngram::ngram_counts;
use super::MetricsError;

/// Corpus BLEU-1 through BLEU-`max_n`.
///
/// Clipped n-gram matches and hypothesis n-gram totals are summed over the
/// corpus before taking precisions; the brevity penalty uses, per sample, the
/// reference length closest to the hypothesis length (shorter on ties).
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>], max_n: usize) -> Result<Vec<f64>, MetricsError> {
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricsError::Mismatch { hypotheses: hypotheses.len(), references: references.len() });
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(MetricsError::NoReferences);
    }
    let mut matches = alloc::vec![0usize; max_n];
    let mut totals = alloc::vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, refs) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .expect("non-empty references");
        for n in 1..=max_n {
            let h = ngram_counts(hyp, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (g, &c) in &h {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                matches[n - 1] += c.min(max_ref);
                totals[n - 1] += c;
            }
        }
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        libm::exp(1.0 - ref_len as f64 / hyp_len as f64)
    };
    let mut scores = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..max_n {
        if matches[n] == 0 || totals[n] == 0 {
            zero = true;
        } else {
            log_sum += libm::log(matches[n] as f64 / totals[n] as f64);
        }
        scores.push(if zero { 0.0 } else { bp * libm::exp(log_sum / (n + 1) as f64) });
    }
    Ok(scores)
}

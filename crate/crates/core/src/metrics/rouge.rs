use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Recall weight of the F-measure.
pub const ROUGE_BETA: f64 = 1.2;

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with recall weighted by [`ROUGE_BETA`], best over references.
pub fn rouge_l(hypothesis: &[String], references: &[Vec<String>]) -> f64 {
    let b2 = ROUGE_BETA * ROUGE_BETA;
    references
        .iter()
        .map(|r| {
            let lcs = lcs_len(hypothesis, r);
            if lcs == 0 {
                return 0.0;
            }
            let p = lcs as f64 / hypothesis.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}

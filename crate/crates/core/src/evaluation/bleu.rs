//! Corpus BLEU with one reference per candidate.

use alloc::collections::BTreeMap;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{bail, Result};

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Geometric mean of clipped n-gram precisions for `n = 1..=max_n` times the
/// brevity penalty. Orders above 1 with no match use `1 / (total + 1)`;
/// orders the candidates are too short to contain thus count as precision 1.
pub fn bleu<T: Ord>(candidates: &[&[T]], references: &[&[T]], max_n: usize) -> Result<f64> {
    if candidates.is_empty() || candidates.len() != references.len() {
        bail!(InvalidArgument, "{} candidates vs {} references", candidates.len(), references.len());
    }
    if max_n < 1 {
        bail!(InvalidArgument, "max_n must be at least 1");
    }
    let c: usize = candidates.iter().map(|s| s.len()).sum();
    let r: usize = references.iter().map(|s| s.len()).sum();
    if c == 0 || r == 0 {
        bail!(Empty, "empty candidate or reference text");
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (cand, refr) in candidates.iter().zip(references) {
            let rc = ngram_counts(refr, n);
            for (g, k) in ngram_counts(cand, n) {
                total += k;
                matched += k.min(rc.get(g).copied().unwrap_or(0));
            }
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / max_n as f64).exp())
}

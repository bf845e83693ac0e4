//! Sentence BLEU: clipped n-gram precisions up to 4-grams, geometric mean,
//! brevity penalty. A precision with an empty denominator or zero matches is
//! add-one smoothed, which keeps `bleu(x, [x]) = 1` for short sentences and
//! gives disjoint pairs a small positive floor instead of a hard zero.

use std::collections::HashMap;

const MAX_ORDER: usize = 4;

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU of a candidate token sequence against one or more references.
/// An empty candidate scores 0 by definition.
pub fn bleu_tokens(candidate: &[&str], references: &[Vec<&str>]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let cand = ngram_counts(candidate, n);
        let denom: usize = candidate.len().saturating_sub(n - 1);
        let mut clipped = 0usize;
        for (gram, &count) in &cand {
            let max_ref = references
                .iter()
                .map(|r| *ngram_counts(r, n).get(gram).unwrap_or(&0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        let p = if denom == 0 || clipped == 0 {
            (clipped + 1) as f64 / (denom + 1) as f64
        } else {
            clipped as f64 / denom as f64
        };
        log_sum += p.ln();
    }
    let precision = (log_sum / MAX_ORDER as f64).exp();

    // Brevity penalty against the closest reference length (ties to the
    // shorter one).
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - c as i64).abs(), len))
        .unwrap();
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * precision
}

/// Whitespace-tokenized convenience wrapper.
pub fn bleu_sentences(candidate: &str, references: &[&str]) -> f64 {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refs: Vec<Vec<&str>> = references
        .iter()
        .map(|r| r.split_whitespace().collect())
        .collect();
    bleu_tokens(&cand, &refs)
}

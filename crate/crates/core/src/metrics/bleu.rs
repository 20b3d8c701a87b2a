//! BLEU with clipped n-gram precision and closest-reference brevity penalty.

use std::collections::HashMap;

pub const BLEU_MAX_N: usize = 4;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// (clipped matches, candidate n-gram total) for one sentence.
fn clipped(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matches = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`; the shorter one on ties.
fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn combine(precisions: &[f64], bp: f64) -> f64 {
    if precisions.iter().any(|&p| p <= 0.0) {
        return 0.0;
    }
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / precisions.len() as f64;
    bp * log_mean.exp()
}

/// Unsmoothed corpus BLEU-1..=max_n.
pub fn corpus_bleu_tokens(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    max_n: usize,
) -> Vec<f64> {
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        for n in 1..=max_n {
            let (m, t) = clipped(cand, refs, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        c_len += cand.len();
        r_len += closest_ref_len(cand.len(), refs);
    }
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let bp = brevity_penalty(c_len, r_len);
    (1..=max_n).map(|n| combine(&precisions[..n], bp)).collect()
}

/// Sentence BLEU-n; orders above one use add-one smoothing.
pub fn sentence_bleu_tokens(candidate: &[String], references: &[Vec<String>], n: usize) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let precisions: Vec<f64> = (1..=n)
        .map(|k| {
            let (m, t) = clipped(candidate, references, k);
            if k == 1 {
                if t == 0 {
                    0.0
                } else {
                    m as f64 / t as f64
                }
            } else {
                (m as f64 + 1.0) / (t as f64 + 1.0)
            }
        })
        .collect();
    let bp = brevity_penalty(
        candidate.len(),
        closest_ref_len(candidate.len(), references),
    );
    combine(&precisions, bp)
}

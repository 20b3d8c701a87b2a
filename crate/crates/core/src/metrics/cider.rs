//! CIDEr: TF-IDF weighted n-gram cosine, n = 1..4 with uniform weights,
//! scaled by 10.
//!
//! Document frequency counts the instances whose reference set contains an
//! n-gram. The default IDF is smoothed, `ln((1 + N) / (1 + df)) + 1`, which
//! keeps weights positive on tiny corpora (with the raw `ln(N / df)` every
//! weight of a one-instance corpus is zero). [`IdfMode::Raw`] gives the
//! original `ln(N / max(df, 1))`.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::bleu::ngram_counts;

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdfMode {
    #[default]
    Smoothed,
    Raw,
}

impl IdfMode {
    fn idf(self, n_docs: usize, df: usize) -> f64 {
        let n = n_docs as f64;
        match self {
            IdfMode::Smoothed => ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0,
            IdfMode::Raw => (n / df.max(1) as f64).ln(),
        }
    }
}

type Weighted<'a> = BTreeMap<&'a [String], f64>;

fn tfidf<'a>(
    tokens: &'a [String],
    n: usize,
    df: &HashMap<&[String], usize>,
    n_docs: usize,
    mode: IdfMode,
) -> Weighted<'a> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0);
            (g, c as f64 / total as f64 * mode.idf(n_docs, d))
        })
        .collect()
}

fn cosine(a: &Weighted<'_>, b: &Weighted<'_>) -> f64 {
    let dot: f64 = a
        .iter()
        .map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0))
        .sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Returns the corpus mean and the per-instance scores, both in `[0, 10]`.
pub fn cider_tokens(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    mode: IdfMode,
) -> (f64, Vec<f64>) {
    let n_docs = references.len();
    let mut scores = vec![0.0; candidates.len()];
    for n in 1..=CIDER_MAX_N {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for refs in references {
            let grams: HashSet<&[String]> = refs
                .iter()
                .flat_map(|r| r.windows(n).filter(|_| r.len() >= n))
                .collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            if refs.is_empty() {
                continue;
            }
            let cv = tfidf(cand, n, &df, n_docs, mode);
            let sim: f64 = refs
                .iter()
                .map(|r| cosine(&cv, &tfidf(r, n, &df, n_docs, mode)))
                .sum::<f64>()
                / refs.len() as f64;
            scores[i] += sim / CIDER_MAX_N as f64;
        }
    }
    scores.iter_mut().for_each(|s| *s *= CIDER_SCALE);
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    (mean, scores)
}

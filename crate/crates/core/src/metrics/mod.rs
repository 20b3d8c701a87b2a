//! Answer and explanation metrics.
//!
//! Values are kept on their natural scale: `[0, 1]` for accuracy, BLEU,
//! ROUGE-L and METEOR, `[0, 10]` for CIDEr. Reports multiply by 100.

mod bleu;
mod cider;
mod external;
mod meteor;
mod rouge;
mod vqa;

use serde::{Deserialize, Serialize};

use crate::text::MetricTokenizer;

pub use bleu::{corpus_bleu_tokens, sentence_bleu_tokens, BLEU_MAX_N};
pub use cider::{cider_tokens, IdfMode, CIDER_MAX_N, CIDER_SCALE};
pub use external::{load_external_scores, parse_external_scores, ExternalScores};
pub use meteor::{
    align as meteor_align, meteor_stats, meteor_tokens, stem, MeteorAlignment, MeteorStats,
};
pub use rouge::{lcs_len, rouge_l_tokens, ROUGE_BETA};
pub use vqa::{normalize_answer, vqa_accuracy, vqa_accuracy_normalized};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("gold answer set is empty")]
    EmptyGold,
    #[error("no score for id {0}")]
    MissingId(String),
    #[error("score {value} for id {id} outside [0, 1]")]
    RangeError { id: String, value: f64 },
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{0} candidates but {1} reference sets")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One metric over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub corpus_value: f64,
    pub per_instance: Vec<(String, f64)>,
}

impl MetricValue {
    /// Corpus value on the reporting scale (x100).
    pub fn reported(&self) -> f64 {
        self.corpus_value * 100.0
    }
}

/// One candidate with its references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

/// `n / sum(1/x)`; zero if any value is non-positive, and for an empty list.
pub fn harmonic_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

struct Tokenized {
    ids: Vec<String>,
    cands: Vec<Vec<String>>,
    refs: Vec<Vec<Vec<String>>>,
}

fn tokenize_items(items: &[EvalItem], tok: &MetricTokenizer) -> Tokenized {
    Tokenized {
        ids: items.iter().map(|i| i.id.clone()).collect(),
        cands: items.iter().map(|i| tok.tokenize(&i.candidate)).collect(),
        refs: items
            .iter()
            .map(|i| i.references.iter().map(|r| tok.tokenize(r)).collect())
            .collect(),
    }
}

fn per_instance(ids: &[String], values: Vec<f64>) -> Vec<(String, f64)> {
    ids.iter().cloned().zip(values).collect()
}

/// Corpus BLEU-1..4; per-instance values are smoothed sentence BLEU.
pub fn bleu(items: &[EvalItem], tok: &MetricTokenizer) -> Vec<MetricValue> {
    let t = tokenize_items(items, tok);
    let corpus = corpus_bleu_tokens(&t.cands, &t.refs, BLEU_MAX_N);
    (1..=BLEU_MAX_N)
        .map(|n| MetricValue {
            name: format!("BLEU-{n}"),
            corpus_value: corpus[n - 1],
            per_instance: per_instance(
                &t.ids,
                t.cands
                    .iter()
                    .zip(&t.refs)
                    .map(|(c, r)| sentence_bleu_tokens(c, r, n))
                    .collect(),
            ),
        })
        .collect()
}

pub fn rouge_l(candidate: &str, references: &[String], tok: &MetricTokenizer) -> f64 {
    let refs: Vec<Vec<String>> = references.iter().map(|r| tok.tokenize(r)).collect();
    rouge_l_tokens(&tok.tokenize(candidate), &refs)
}

pub fn rouge_l_corpus(items: &[EvalItem], tok: &MetricTokenizer) -> MetricValue {
    let t = tokenize_items(items, tok);
    let values: Vec<f64> = t
        .cands
        .iter()
        .zip(&t.refs)
        .map(|(c, r)| rouge_l_tokens(c, r))
        .collect();
    MetricValue {
        name: "ROUGE-L".into(),
        corpus_value: mean(values.iter().copied()),
        per_instance: per_instance(&t.ids, values),
    }
}

pub fn meteor(candidate: &str, references: &[String], tok: &MetricTokenizer) -> f64 {
    let refs: Vec<Vec<String>> = references.iter().map(|r| tok.tokenize(r)).collect();
    meteor_tokens(&tok.tokenize(candidate), &refs)
}

pub fn meteor_corpus(items: &[EvalItem], tok: &MetricTokenizer) -> MetricValue {
    let t = tokenize_items(items, tok);
    let values: Vec<f64> = t
        .cands
        .iter()
        .zip(&t.refs)
        .map(|(c, r)| meteor_tokens(c, r))
        .collect();
    MetricValue {
        name: "METEOR".into(),
        corpus_value: mean(values.iter().copied()),
        per_instance: per_instance(&t.ids, values),
    }
}

/// CIDEr with IDF taken from this corpus's references.
pub fn cider(items: &[EvalItem], tok: &MetricTokenizer, idf: IdfMode) -> MetricValue {
    let t = tokenize_items(items, tok);
    let (corpus_value, values) = cider_tokens(&t.cands, &t.refs, idf);
    MetricValue {
        name: "CIDEr".into(),
        corpus_value,
        per_instance: per_instance(&t.ids, values),
    }
}

/// BLEU-1..4, ROUGE-L, METEOR and CIDEr in that order.
pub fn explanation_metrics(
    items: &[EvalItem],
    tok: &MetricTokenizer,
    idf: IdfMode,
) -> Vec<MetricValue> {
    let mut out = bleu(items, tok);
    out.push(rouge_l_corpus(items, tok));
    out.push(meteor_corpus(items, tok));
    out.push(cider(items, tok, idf));
    out
}

//! Mapping to multiple-choice options.
//!
//! The primary route scores every option as a continuation of the model
//! input and picks the lowest perplexity,
//! `PPL(Y) = exp(-(1/t) * sum_i ln p(y_i | y_<i))`. The baseline route
//! embeds a free-form generation and each option as mean word vectors and
//! picks the highest cosine similarity.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scorer::{sequence_logprob, ScorerError, TokenId, TokenScorer};
use crate::text::metric_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionPerplexity {
    pub option_index: usize,
    pub perplexity: f64,
    pub token_count: usize,
    pub total_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplResult {
    pub per_option: Vec<OptionPerplexity>,
    pub chosen_index: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("no options to choose from")]
    NoOptions,
    #[error("option {0} has no tokens")]
    EmptyOption(usize),
    #[error("generation has no in-vocabulary word")]
    EmptyGeneration,
    #[error("embedding table is empty")]
    EmptyTable,
    #[error("embedding file line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn perplexity(total_logprob: f64, token_count: usize) -> f64 {
    (-total_logprob / token_count as f64).exp()
}

/// Relative gap below which two scores count as tied. Equal-probability
/// options can differ in the last bits depending on summation order.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn clearly_less(a: f64, b: f64) -> bool {
    a < b - TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Lowest-perplexity option; ties (within [`TIE_TOLERANCE`]) go to the
/// lowest index.
pub fn select_mc_ppl<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    options: &[Vec<TokenId>],
) -> Result<PplResult, SelectError> {
    if options.is_empty() {
        return Err(SelectError::NoOptions);
    }
    let mut per_option = Vec::with_capacity(options.len());
    for (i, opt) in options.iter().enumerate() {
        if opt.is_empty() {
            return Err(SelectError::EmptyOption(i));
        }
        let score = sequence_logprob(scorer, context, opt)?;
        per_option.push(OptionPerplexity {
            option_index: i,
            perplexity: perplexity(score.total, opt.len()),
            token_count: opt.len(),
            total_logprob: score.total,
        });
    }
    let mut chosen = 0;
    for (i, o) in per_option.iter().enumerate() {
        if clearly_less(o.perplexity, per_option[chosen].perplexity) {
            chosen = i;
        }
    }
    Ok(PplResult {
        per_option,
        chosen_index: chosen,
    })
}

/// Word vectors with case-folded lookup.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Adds a vector; the first entry wins when two words fold to the same key.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<(), SelectError> {
        if vector.len() != self.dim {
            return Err(SelectError::EmbeddingFormat {
                line: 0,
                message: format!(
                    "vector for {word:?} has length {}, expected {}",
                    vector.len(),
                    self.dim
                ),
            });
        }
        self.vectors.entry(word.to_lowercase()).or_insert(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Reads the GloVe text format: `word v1 v2 ... vd` per line.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, SelectError> {
        let mut table: Option<EmbeddingTable> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let vector = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SelectError::EmbeddingFormat {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            if vector.is_empty() {
                return Err(SelectError::EmbeddingFormat {
                    line: idx + 1,
                    message: format!("no vector for {word:?}"),
                });
            }
            let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
            t.insert(word, vector).map_err(|e| match e {
                SelectError::EmbeddingFormat { message, .. } => SelectError::EmbeddingFormat {
                    line: idx + 1,
                    message,
                },
                other => other,
            })?;
        }
        table.ok_or(SelectError::EmptyTable)
    }

    pub fn load(path: &Path) -> Result<Self, SelectError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Mean of the in-vocabulary word vectors, `None` if there are none.
    pub fn embed(&self, text: &str) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in metric_tokens(text) {
            if let Some(v) = self.get(&w) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                n += 1;
            }
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Similarity assigned to options with no in-vocabulary word.
pub const OOV_SIMILARITY: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingChoice {
    pub chosen_index: usize,
    pub similarities: Vec<f64>,
}

/// Highest-cosine option against the mean-pooled generation; ties go to
/// the lowest index.
pub fn select_mc_embedding(
    generation: &str,
    options: &[String],
    table: &EmbeddingTable,
) -> Result<EmbeddingChoice, SelectError> {
    if table.is_empty() {
        return Err(SelectError::EmptyTable);
    }
    if options.is_empty() {
        return Err(SelectError::NoOptions);
    }
    let g = table
        .embed(generation)
        .ok_or(SelectError::EmptyGeneration)?;
    let similarities: Vec<f64> = options
        .iter()
        .map(|o| table.embed(o).map_or(OOV_SIMILARITY, |v| cosine(&g, &v)))
        .collect();
    let mut chosen = 0;
    for (i, &s) in similarities.iter().enumerate() {
        if clearly_less(similarities[chosen], s) {
            chosen = i;
        }
    }
    Ok(EmbeddingChoice {
        chosen_index: chosen,
        similarities,
    })
}

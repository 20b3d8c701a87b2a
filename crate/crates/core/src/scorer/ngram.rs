//! Add-k smoothed n-gram reference scorer.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScorerError, TokenId, TokenScorer, Vocab, BOS, EOS};
use crate::augment::{PromptRegistry, TrainingExample, DEFAULT_SEPARATOR};
use crate::text::model_tokens;

pub const MODEL_FORMAT: &str = "umae-ngram";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct NextCounts {
    next: HashMap<TokenId, u64>,
    total: u64,
}

/// `p(y | ctx) = (count(ctx, y) + k) / (total(ctx) + k |V|)` where `ctx` is
/// the last `order - 1` tokens of the context (fewer near the start of a
/// sequence).
#[derive(Debug, Clone, PartialEq)]
pub struct NgramScorer {
    order: usize,
    k: f64,
    vocab: Vocab,
    counts: HashMap<Vec<TokenId>, NextCounts>,
}

/// Accumulates counts over `BOS ++ tokens(input) ++ tokens(target) ++ EOS`.
#[derive(Debug, Clone)]
pub struct NgramTrainer {
    order: usize,
    k: f64,
    reserved: Vec<String>,
    extra: Vec<String>,
}

impl NgramTrainer {
    pub fn new(order: usize, k: f64) -> Self {
        Self {
            order,
            k,
            reserved: Vec::new(),
            extra: Vec::new(),
        }
    }

    /// Tokens placed right after `BOS`/`EOS` in the vocabulary.
    pub fn reserve<I, S>(mut self, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.reserved.extend(tokens.into_iter().map(Into::into));
        self
    }

    /// Tokens that must be scoreable even if the training text never uses
    /// them (multiple-choice options, for instance).
    pub fn extra_vocab<I, S>(mut self, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.extra.extend(tokens.into_iter().map(Into::into));
        self
    }

    pub fn train(&self, examples: &[TrainingExample]) -> Result<NgramScorer, ScorerError> {
        if self.order == 0 {
            return Err(ScorerError::InvalidParameter(
                "n-gram order must be at least 1".into(),
            ));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(ScorerError::InvalidParameter(format!(
                "smoothing k = {} must be positive",
                self.k
            )));
        }
        if examples.is_empty() {
            return Err(ScorerError::EmptyCorpus);
        }
        let streams: Vec<Vec<String>> = examples
            .iter()
            .map(|ex| {
                let mut s = vec![BOS.to_string()];
                s.extend(model_tokens(&ex.input_text));
                s.extend(model_tokens(&ex.target_text));
                s.push(EOS.to_string());
                s
            })
            .collect();
        let vocab = Vocab::build(
            self.reserved.iter().map(String::as_str),
            streams
                .iter()
                .flatten()
                .map(String::as_str)
                .chain(self.extra.iter().map(String::as_str)),
        );
        let mut counts: HashMap<Vec<TokenId>, NextCounts> = HashMap::new();
        for s in &streams {
            let ids = vocab.encode(s)?;
            for i in 1..ids.len() {
                let start = i.saturating_sub(self.order - 1);
                let entry = counts.entry(ids[start..i].to_vec()).or_default();
                *entry.next.entry(ids[i]).or_insert(0) += 1;
                entry.total += 1;
            }
        }
        Ok(NgramScorer {
            order: self.order,
            k: self.k,
            vocab,
            counts,
        })
    }
}

/// Trains with the default prompt tokens and separator reserved.
pub fn train_ngram(
    examples: &[TrainingExample],
    order: usize,
    k: f64,
) -> Result<NgramScorer, ScorerError> {
    let registry = PromptRegistry::default();
    NgramTrainer::new(order, k)
        .reserve(registry.tokens().map(str::to_string))
        .reserve([DEFAULT_SEPARATOR])
        .train(examples)
}

#[derive(Serialize, Deserialize)]
struct ContextRecord {
    context: Vec<String>,
    next: Vec<(String, u64)>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    k: f64,
    vocab: Vec<String>,
    contexts: Vec<ContextRecord>,
}

impl NgramScorer {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Observed count of `next` after exactly `context` (already truncated).
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|c| c.next.get(&next))
            .copied()
            .unwrap_or(0)
    }

    fn key<'c>(&self, context: &'c [TokenId]) -> &'c [TokenId] {
        &context[context.len().saturating_sub(self.order - 1)..]
    }

    /// JSON model dump; contexts and successors are sorted so equal models
    /// produce equal bytes.
    pub fn to_json(&self) -> String {
        let name = |i: &TokenId| {
            self.vocab
                .token(*i)
                .expect("ids come from vocab")
                .to_string()
        };
        let mut contexts: Vec<ContextRecord> = self
            .counts
            .iter()
            .map(|(ctx, c)| {
                let mut next: Vec<(TokenId, u64)> = c.next.iter().map(|(t, n)| (*t, *n)).collect();
                next.sort_unstable();
                ContextRecord {
                    context: ctx.iter().map(name).collect(),
                    next: next.into_iter().map(|(t, n)| (name(&t), n)).collect(),
                }
            })
            .collect();
        contexts.sort_by(|a, b| a.context.cmp(&b.context));
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            order: self.order,
            k: self.k,
            vocab: self.vocab.tokens().to_vec(),
            contexts,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScorerError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ScorerError::ModelFile(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ScorerError::ModelFile(format!(
                "unsupported model {} v{}",
                file.format, file.version
            )));
        }
        if file.order == 0 || file.k.is_nan() || file.k <= 0.0 {
            return Err(ScorerError::ModelFile(
                "order must be >= 1 and k > 0".into(),
            ));
        }
        let vocab = Vocab::new(file.vocab)?;
        let mut counts = HashMap::new();
        for rec in file.contexts {
            let ctx = vocab.encode(&rec.context)?;
            let mut nc = NextCounts::default();
            for (tok, n) in rec.next {
                let id = vocab.id(&tok).ok_or(ScorerError::UnknownToken(tok))?;
                nc.next.insert(id, n);
                nc.total += n;
            }
            counts.insert(ctx, nc);
        }
        Ok(Self {
            order: file.order,
            k: file.k,
            vocab,
            counts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Per-context successor counts in a stable order; used by tests and
    /// model inspection.
    pub fn table(&self) -> BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>> {
        self.counts
            .iter()
            .map(|(k, v)| (k.clone(), v.next.iter().map(|(a, b)| (*a, *b)).collect()))
            .collect()
    }
}

impl TokenScorer for NgramScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        for &t in context {
            self.vocab.check(t)?;
        }
        let v = self.vocab.len() as f64;
        let entry = self.counts.get(self.key(context));
        let total = entry.map_or(0, |e| e.total) as f64;
        let log_denom = (total + self.k * v).ln();
        Ok(self
            .vocab
            .ids()
            .map(|id| {
                let c = entry.and_then(|e| e.next.get(&id)).copied().unwrap_or(0) as f64;
                (c + self.k).ln() - log_denom
            })
            .collect())
    }
}

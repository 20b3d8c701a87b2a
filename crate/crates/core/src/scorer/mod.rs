//! Next-token scoring.
//!
//! [`TokenScorer`] is the only thing decoders and option selection need from
//! a model: a fixed vocabulary and a log-probability vector over it for any
//! context. [`NgramScorer`] is the in-process reference implementation;
//! [`ExternalScorer`] talks to an out-of-process model over line-delimited
//! JSON.

mod external;
mod ngram;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::text::model_tokens;

pub use external::{serve, serve_tcp, ExternalScorer, PROTOCOL_NAME, PROTOCOL_VERSION};
pub use ngram::{train_ngram, NgramScorer, NgramTrainer, MODEL_FORMAT, MODEL_VERSION};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(TokenId),
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid scorer parameter: {0}")]
    InvalidParameter(String),
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered, duplicate-free token list with `BOS` and `EOS` present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos: TokenId,
    eos: TokenId,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self, ScorerError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(ScorerError::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        let find = |t: &str| {
            index
                .get(t)
                .copied()
                .ok_or_else(|| ScorerError::InvalidVocab(format!("missing reserved token {t}")))
        };
        let (bos, eos) = (find(BOS)?, find(EOS)?);
        Ok(Self {
            tokens,
            index,
            bos,
            eos,
        })
    }

    /// `BOS`, `EOS`, then `reserved` in the given order, then the remaining
    /// tokens sorted. Duplicates are dropped.
    pub fn build<'a>(
        reserved: impl IntoIterator<Item = &'a str>,
        seen: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut tokens: Vec<String> = vec![BOS.into(), EOS.into()];
        for r in reserved {
            if !tokens.iter().any(|t| t == r) {
                tokens.push(r.to_string());
            }
        }
        let mut rest: Vec<&str> = seen.into_iter().collect();
        rest.sort_unstable();
        rest.dedup();
        let head: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        tokens.extend(
            rest.into_iter()
                .filter(|t| !head.contains(*t))
                .map(str::to_string),
        );
        Self::new(tokens).expect("built vocabularies are valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> {
        (0..self.tokens.len() as u32).map(TokenId)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>, ScorerError> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| ScorerError::UnknownToken(t.as_ref().to_string()))
            })
            .collect()
    }

    /// Tokenizes with the model tokenizer and encodes.
    pub fn encode_text(&self, text: &str) -> Result<Vec<TokenId>, ScorerError> {
        self.encode(&model_tokens(text))
    }

    /// `BOS` followed by the encoded text: the conditioning context for a
    /// model input.
    pub fn context_for(&self, text: &str) -> Result<Vec<TokenId>, ScorerError> {
        let mut ctx = vec![self.bos];
        ctx.extend(self.encode_text(text)?);
        Ok(ctx)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter().filter_map(|&i| self.token(i)).collect()
    }

    pub fn check(&self, id: TokenId) -> Result<(), ScorerError> {
        if id.index() < self.tokens.len() {
            Ok(())
        } else {
            Err(ScorerError::UnknownTokenId(id))
        }
    }
}

/// A source of next-token log-probabilities over a fixed vocabulary.
///
/// `logprobs` returns one natural-log probability per vocabulary entry and
/// is deterministic in its input.
pub trait TokenScorer: Send + Sync {
    fn vocab(&self) -> &Vocab;

    fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ScorerError>;
}

impl<T: TokenScorer + ?Sized> TokenScorer for &T {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).logprobs(context)
    }
}

impl<T: TokenScorer + ?Sized> TokenScorer for Box<T> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).logprobs(context)
    }
}

/// Every token equally likely, regardless of context.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    vocab: Vocab,
}

impl UniformScorer {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab }
    }
}

impl TokenScorer for UniformScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logprobs(&self, _context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        Ok(vec![-(self.vocab.len() as f64).ln(); self.vocab.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub total: f64,
    pub per_token: Vec<f64>,
}

/// Scores `target` token by token after `context`:
/// `per_token[i] = logprobs(context ++ target[..i])[target[i]]`.
pub fn sequence_logprob<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    target: &[TokenId],
) -> Result<SequenceScore, ScorerError> {
    let vocab = scorer.vocab();
    for &t in context.iter().chain(target) {
        vocab.check(t)?;
    }
    let mut prefix = context.to_vec();
    let mut per_token = Vec::with_capacity(target.len());
    for &t in target {
        let lp = scorer.logprobs(&prefix)?;
        per_token.push(lp[t.index()]);
        prefix.push(t);
    }
    Ok(SequenceScore {
        total: per_token.iter().sum(),
        per_token,
    })
}

/// `ln Σ exp(x)` computed stably.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

//! Decoding strategies over any [`TokenScorer`].
//!
//! Beam search ranks hypotheses by total log-probability (optionally by
//! per-token average). The samplers truncate each step's distribution,
//! renormalize and draw with a seeded PCG stream (see [`crate::rng`]).
//! Probability ties during truncation go to the lower vocabulary index, and
//! EOS competes like any other token.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::scorer::{ScorerError, TokenId, TokenScorer};
use crate::text::detokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Beam,
    #[serde(rename = "topk")]
    TopK,
    Nucleus,
    Typical,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Beam => "beam",
            Strategy::TopK => "topk",
            Strategy::Nucleus => "nucleus",
            Strategy::Typical => "typical",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "beam" => Ok(Strategy::Beam),
            "topk" | "top-k" | "top_k" => Ok(Strategy::TopK),
            "nucleus" | "top-p" | "top_p" => Ok(Strategy::Nucleus),
            "typical" => Ok(Strategy::Typical),
            _ => Err(format!("unknown decoding strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub k: usize,
    pub p: f64,
    pub tau: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Rank beams by average rather than total log-probability.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size: 5,
            k: 50,
            p: 0.9,
            tau: 0.9,
            max_len: 20,
            seed: 0,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    pub fn beam(beam_size: usize, max_len: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size,
            max_len,
            ..Self::default()
        }
    }

    pub fn top_k(k: usize, max_len: usize, seed: u64) -> Self {
        Self {
            strategy: Strategy::TopK,
            k,
            max_len,
            seed,
            ..Self::default()
        }
    }

    pub fn nucleus(p: f64, max_len: usize, seed: u64) -> Self {
        Self {
            strategy: Strategy::Nucleus,
            p,
            max_len,
            seed,
            ..Self::default()
        }
    }

    pub fn typical(tau: f64, max_len: usize, seed: u64) -> Self {
        Self {
            strategy: Strategy::Typical,
            tau,
            max_len,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: String| Err(DecodeError::Config(m));
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        match self.strategy {
            Strategy::Beam if self.beam_size == 0 => bad("beam_size must be at least 1".into()),
            Strategy::TopK if self.k == 0 => bad("k must be at least 1".into()),
            Strategy::Nucleus if !(self.p > 0.0 && self.p <= 1.0) => {
                bad(format!("p = {} not in (0, 1]", self.p))
            }
            Strategy::Typical if !(self.tau > 0.0 && self.tau <= 1.0) => {
                bad(format!("tau = {} not in (0, 1]", self.tau))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub ids: Vec<TokenId>,
    pub tokens: Vec<String>,
    pub text: String,
    pub per_token_logprob: Vec<f64>,
    pub total_logprob: f64,
}

impl GenerationResult {
    fn from_ids<S: TokenScorer + ?Sized>(
        scorer: &S,
        ids: Vec<TokenId>,
        per_token: Vec<f64>,
    ) -> Self {
        let vocab = scorer.vocab();
        let eos = vocab.eos();
        let tokens: Vec<String> = vocab.decode(&ids).into_iter().map(str::to_string).collect();
        let visible: Vec<&str> = ids
            .iter()
            .zip(&tokens)
            .filter(|(i, _)| **i != eos)
            .map(|(_, t)| t.as_str())
            .collect();
        Self {
            text: detokenize(&visible),
            tokens,
            ids,
            total_logprob: per_token.iter().sum(),
            per_token_logprob: per_token,
        }
    }
}

/// Renormalized truncated distribution: `tokens[i]` has probability `probs[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub tokens: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Support {
    fn from_prefix(order: &[usize], probs: &[f64], len: usize) -> Self {
        let tokens: Vec<usize> = order[..len].to_vec();
        let mass: f64 = tokens.iter().map(|&i| probs[i]).sum();
        Support {
            probs: tokens.iter().map(|&i| probs[i] / mass).collect(),
            tokens,
        }
    }

    pub fn contains(&self, token: usize) -> bool {
        self.tokens.contains(&token)
    }

    /// Inverse-CDF draw over the support in its stored order.
    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng::uniform01(rng);
        let mut acc = 0.0;
        for (&t, &p) in self.tokens.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return t;
            }
        }
        *self.tokens.last().expect("supports are non-empty")
    }
}

/// Slack when comparing cumulative mass against a threshold.
const MASS_EPS: f64 = 1e-12;

fn positive_by_prob_desc(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn prefix_reaching(order: &[usize], probs: &[f64], threshold: f64) -> usize {
    let mut acc = 0.0;
    for (n, &i) in order.iter().enumerate() {
        acc += probs[i];
        if acc >= threshold - MASS_EPS {
            return n + 1;
        }
    }
    order.len()
}

/// The `k` most probable tokens.
pub fn top_k_support(probs: &[f64], k: usize) -> Support {
    let order = positive_by_prob_desc(probs);
    Support::from_prefix(&order, probs, k.min(order.len()))
}

/// Smallest most-probable prefix with cumulative mass at least `p`.
pub fn nucleus_support(probs: &[f64], p: f64) -> Support {
    let order = positive_by_prob_desc(probs);
    let len = prefix_reaching(&order, probs, p);
    Support::from_prefix(&order, probs, len)
}

/// Tokens ranked by `|-ln p - H|` (ascending), smallest prefix with
/// cumulative mass at least `tau`.
pub fn typical_support(probs: &[f64], tau: f64) -> Support {
    let entropy: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    let dist = |i: usize| (-probs[i].ln() - entropy).abs();
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        dist(a)
            .partial_cmp(&dist(b))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let len = prefix_reaching(&order, probs, tau);
    Support::from_prefix(&order, probs, len)
}

/// The truncated support a sampling config would draw from.
pub fn truncate(probs: &[f64], config: &DecodeConfig) -> Support {
    match config.strategy {
        Strategy::TopK => top_k_support(probs, config.k),
        Strategy::Nucleus => nucleus_support(probs, config.p),
        Strategy::Typical => typical_support(probs, config.tau),
        Strategy::Beam => top_k_support(probs, 1),
    }
}

fn check_strategy(config: &DecodeConfig, want: Strategy) -> Result<(), DecodeError> {
    config.validate()?;
    if config.strategy != want {
        return Err(DecodeError::Config(format!(
            "{} decoder called with strategy {}",
            want, config.strategy
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Hypothesis {
    ids: Vec<TokenId>,
    lps: Vec<f64>,
    score: f64,
}

impl Hypothesis {
    fn rank(&self, normalize: bool) -> f64 {
        if normalize && !self.ids.is_empty() {
            self.score / self.ids.len() as f64
        } else {
            self.score
        }
    }
}

/// Best first: higher rank, then lexicographically smaller ids.
fn better(a: &Hypothesis, b: &Hypothesis, normalize: bool) -> Ordering {
    b.rank(normalize)
        .partial_cmp(&a.rank(normalize))
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.ids.cmp(&b.ids))
}

/// Beam search; finished hypotheses leave the beam for a completed pool.
/// Returns the best completed hypothesis, or the best live one if none
/// finished within `max_len`.
pub fn beam_search<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    config: &DecodeConfig,
) -> Result<GenerationResult, DecodeError> {
    check_strategy(config, Strategy::Beam)?;
    let eos = scorer.vocab().eos();
    let norm = config.length_normalize;
    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        lps: Vec::new(),
        score: 0.0,
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();
    let mut prefix = context.to_vec();
    for _ in 0..config.max_len {
        let mut candidates = Vec::new();
        for h in &live {
            prefix.truncate(context.len());
            prefix.extend_from_slice(&h.ids);
            let lp = scorer.logprobs(&prefix)?;
            for (i, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY || l.is_nan() {
                    continue;
                }
                let mut ids = h.ids.clone();
                ids.push(TokenId(i as u32));
                let mut lps = h.lps.clone();
                lps.push(l);
                candidates.push(Hypothesis {
                    ids,
                    lps,
                    score: h.score + l,
                });
            }
        }
        candidates.sort_by(|a, b| better(a, b, norm));
        candidates.truncate(config.beam_size);
        live.clear();
        for c in candidates {
            if c.ids.last() == Some(&eos) {
                completed.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
        if !norm {
            // scores only decrease, so no live beam can overtake a better finished one
            let best_done = completed
                .iter()
                .map(|h| h.score)
                .fold(f64::NEG_INFINITY, f64::max);
            let best_live = live
                .iter()
                .map(|h| h.score)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_done > best_live {
                break;
            }
        }
    }
    let pool = if completed.is_empty() {
        &live
    } else {
        &completed
    };
    let best = pool
        .iter()
        .min_by(|a, b| better(a, b, norm))
        .cloned()
        .unwrap_or(Hypothesis {
            ids: Vec::new(),
            lps: Vec::new(),
            score: 0.0,
        });
    Ok(GenerationResult::from_ids(scorer, best.ids, best.lps))
}

/// Truncated ancestral sampling with an explicit random stream.
pub fn sample_with_rng<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    config: &DecodeConfig,
    rng: &mut StreamRng,
) -> Result<GenerationResult, DecodeError> {
    config.validate()?;
    if config.strategy == Strategy::Beam {
        return Err(DecodeError::Config(
            "sampling called with strategy beam".into(),
        ));
    }
    let eos = scorer.vocab().eos();
    let mut prefix = context.to_vec();
    let mut ids = Vec::new();
    let mut lps = Vec::new();
    for _ in 0..config.max_len {
        let lp = scorer.logprobs(&prefix)?;
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let support = truncate(&probs, config);
        if support.tokens.is_empty() {
            return Err(DecodeError::Scorer(ScorerError::Protocol(
                "scorer returned no token with positive probability".into(),
            )));
        }
        let t = TokenId(support.draw(rng) as u32);
        ids.push(t);
        lps.push(lp[t.index()]);
        prefix.push(t);
        if t == eos {
            break;
        }
    }
    Ok(GenerationResult::from_ids(scorer, ids, lps))
}

pub fn sample_topk<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    config: &DecodeConfig,
) -> Result<GenerationResult, DecodeError> {
    check_strategy(config, Strategy::TopK)?;
    sample_with_rng(scorer, context, config, &mut rng::seeded(config.seed))
}

pub fn sample_nucleus<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    config: &DecodeConfig,
) -> Result<GenerationResult, DecodeError> {
    check_strategy(config, Strategy::Nucleus)?;
    sample_with_rng(scorer, context, config, &mut rng::seeded(config.seed))
}

pub fn sample_typical<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    config: &DecodeConfig,
) -> Result<GenerationResult, DecodeError> {
    check_strategy(config, Strategy::Typical)?;
    sample_with_rng(scorer, context, config, &mut rng::seeded(config.seed))
}

/// Dispatches on `config.strategy`; samplers use `config.seed`.
pub fn generate<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    config: &DecodeConfig,
) -> Result<GenerationResult, DecodeError> {
    match config.strategy {
        Strategy::Beam => beam_search(scorer, context, config),
        _ => sample_with_rng(scorer, context, config, &mut rng::seeded(config.seed)),
    }
}

/// Like [`generate`], but samplers draw from the stream keyed by `key`
/// under `config.seed`, independent of scheduling.
pub fn generate_keyed<S: TokenScorer + ?Sized>(
    scorer: &S,
    context: &[TokenId],
    config: &DecodeConfig,
    key: &str,
) -> Result<GenerationResult, DecodeError> {
    match config.strategy {
        Strategy::Beam => beam_search(scorer, context, config),
        _ => sample_with_rng(
            scorer,
            context,
            config,
            &mut rng::stream_for(config.seed, key),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{sequence_logprob, Vocab};

    const DIST: [f64; 4] = [0.5, 0.3, 0.15, 0.05];

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn top_k_two() {
        let s = top_k_support(&DIST, 2);
        assert_eq!(s.tokens, vec![0, 1]);
        assert!(close(&s.probs, &[0.625, 0.375]));
        assert_eq!(top_k_support(&DIST, 10).tokens, vec![0, 1, 2, 3]);
        assert_eq!(top_k_support(&DIST, 1).tokens, vec![0]);
    }

    #[test]
    fn nucleus_cases() {
        let s = nucleus_support(&DIST, 0.7);
        assert_eq!(s.tokens, vec![0, 1]);
        assert!(close(&s.probs, &[0.625, 0.375]));
        assert_eq!(nucleus_support(&DIST, 1.0).tokens.len(), 4);
        assert_eq!(nucleus_support(&DIST, 0.4).tokens, vec![0]);
        assert_eq!(nucleus_support(&DIST, 0.5).tokens, vec![0]);
    }

    #[test]
    fn typical_worked_example() {
        let probs = [0.4, 0.3, 0.2, 0.1];
        let h: f64 = probs.iter().map(|p: &f64| -p * p.ln()).sum();
        assert!((h - 1.2799).abs() < 1e-4);
        let s = typical_support(&probs, 0.5);
        assert_eq!(s.tokens, vec![1, 2]);
        assert!(close(&s.probs, &[0.6, 0.4]));
        assert_eq!(typical_support(&probs, 1.0).tokens.len(), 4);
        let uniform = [0.25; 4];
        assert_eq!(typical_support(&uniform, 0.5).tokens, vec![0, 1]);
        assert_eq!(typical_support(&uniform, 1.0).tokens, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_break_by_index() {
        let s = top_k_support(&[0.25, 0.25, 0.25, 0.25], 2);
        assert_eq!(s.tokens, vec![0, 1]);
    }

    #[test]
    fn zero_probability_tokens_never_enter() {
        let probs = [0.0, 0.6, 0.0, 0.4];
        assert_eq!(top_k_support(&probs, 4).tokens, vec![1, 3]);
        assert_eq!(typical_support(&probs, 1.0).tokens.len(), 2);
    }

    /// Fixed next-token table keyed on the last token.
    struct Markov {
        vocab: Vocab,
        rows: Vec<Vec<f64>>,
    }

    impl TokenScorer for Markov {
        fn vocab(&self) -> &Vocab {
            &self.vocab
        }
        fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
            let last = context.last().map_or(0, |t| t.index());
            Ok(self.rows[last].iter().map(|p| p.ln()).collect())
        }
    }

    fn markov() -> Markov {
        // <s> </s> a b
        let vocab = Vocab::build([], ["a", "b"]);
        Markov {
            vocab,
            rows: vec![
                vec![0.0, 0.2, 0.5, 0.3],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.6, 0.1, 0.3],
                vec![0.0, 0.3, 0.4, 0.3],
            ],
        }
    }

    fn greedy(m: &Markov, max_len: usize) -> Vec<TokenId> {
        let mut ctx = vec![m.vocab.bos()];
        let mut out = Vec::new();
        for _ in 0..max_len {
            let lp = m.logprobs(&ctx).unwrap();
            let best = (0..lp.len())
                .max_by(|&a, &b| lp[a].partial_cmp(&lp[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            out.push(TokenId(best as u32));
            ctx.push(TokenId(best as u32));
            if best == m.vocab.eos().index() {
                break;
            }
        }
        out
    }

    #[test]
    fn beam_one_is_greedy() {
        let m = markov();
        for max_len in 1..5 {
            let got = beam_search(&m, &[m.vocab.bos()], &DecodeConfig::beam(1, max_len)).unwrap();
            assert_eq!(got.ids, greedy(&m, max_len));
        }
    }

    #[test]
    fn beam_result_rescores() {
        let m = markov();
        let got = beam_search(&m, &[m.vocab.bos()], &DecodeConfig::beam(3, 4)).unwrap();
        let again = sequence_logprob(&m, &[m.vocab.bos()], &got.ids).unwrap();
        assert_eq!(again.per_token, got.per_token_logprob);
        assert_eq!(again.total, got.total_logprob);
        assert_eq!(got.tokens.len(), got.per_token_logprob.len());
        // a -> </s>: 0.5 * 0.6 = 0.3 beats every other finished sequence
        assert_eq!(got.tokens, vec!["a", "</s>"]);
        assert_eq!(got.text, "a");
    }

    #[test]
    fn sampling_is_seed_deterministic_and_rescores() {
        let m = markov();
        let cfg = DecodeConfig::nucleus(0.9, 6, 42);
        let a = sample_nucleus(&m, &[m.vocab.bos()], &cfg).unwrap();
        let b = sample_nucleus(&m, &[m.vocab.bos()], &cfg).unwrap();
        assert_eq!(a, b);
        let again = sequence_logprob(&m, &[m.vocab.bos()], &a.ids).unwrap();
        assert_eq!(again.per_token, a.per_token_logprob);
    }

    #[test]
    fn strategy_mismatch_and_bad_config() {
        let m = markov();
        let ctx = [m.vocab.bos()];
        assert!(matches!(
            beam_search(&m, &ctx, &DecodeConfig::top_k(2, 3, 0)),
            Err(DecodeError::Config(_))
        ));
        assert!(sample_topk(&m, &ctx, &DecodeConfig::top_k(0, 3, 0)).is_err());
        assert!(sample_nucleus(&m, &ctx, &DecodeConfig::nucleus(0.0, 3, 0)).is_err());
        assert!(sample_typical(&m, &ctx, &DecodeConfig::typical(1.5, 3, 0)).is_err());
        assert!(generate(&m, &ctx, &DecodeConfig::beam(2, 0)).is_err());
    }

    #[test]
    fn k_one_sampling_is_greedy() {
        let m = markov();
        let got = sample_topk(&m, &[m.vocab.bos()], &DecodeConfig::top_k(1, 4, 9)).unwrap();
        assert_eq!(got.ids, greedy(&m, 4));
    }
}

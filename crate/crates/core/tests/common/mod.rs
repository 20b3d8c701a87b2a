//! Independent reference implementations used as test oracles. Each one is
//! written from the textbook formula and shares no code with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::Rng;
use rust_stemmers::{Algorithm, Stemmer};

use umae::rng::{stream_for, uniform01};
use umae::scorer::{ScorerError, TokenId, TokenScorer, Vocab};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn random_sentence<R: Rng>(rng: &mut R, alphabet: &[&str], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------- n-gram

/// Add-k n-gram probabilities counted straight from token streams.
pub struct NgramOracle {
    pub order: usize,
    pub k: f64,
    pub vocab_size: usize,
    counts: BTreeMap<(Vec<String>, String), f64>,
    totals: BTreeMap<Vec<String>, f64>,
}

impl NgramOracle {
    pub fn new(streams: &[Vec<String>], order: usize, k: f64, vocab_size: usize) -> Self {
        let mut counts = BTreeMap::new();
        let mut totals = BTreeMap::new();
        for s in streams {
            for i in 1..s.len() {
                let lo = (i + 1).saturating_sub(order);
                let ctx = s[lo..i].to_vec();
                *counts.entry((ctx.clone(), s[i].clone())).or_insert(0.0) += 1.0;
                *totals.entry(ctx).or_insert(0.0) += 1.0;
            }
        }
        Self {
            order,
            k,
            vocab_size,
            counts,
            totals,
        }
    }

    pub fn prob(&self, history: &[String], next: &str) -> f64 {
        let lo = (history.len() + 1).saturating_sub(self.order);
        let ctx = history[lo..].to_vec();
        let c = self
            .counts
            .get(&(ctx.clone(), next.to_string()))
            .copied()
            .unwrap_or(0.0);
        let t = self.totals.get(&ctx).copied().unwrap_or(0.0);
        (c + self.k) / (t + self.k * self.vocab_size as f64)
    }

    /// `exp(-(1/T) * sum ln p)` of `option` following `history`.
    pub fn perplexity(&self, history: &[String], option: &[String]) -> f64 {
        let mut h = history.to_vec();
        let mut log_sum = 0.0;
        for t in option {
            log_sum += self.prob(&h, t).ln();
            h.push(t.clone());
        }
        (-log_sum / option.len() as f64).exp()
    }
}

/// A scorer whose next-token distribution is a fixed random function of the
/// whole context.
pub struct HashedScorer {
    pub vocab: Vocab,
    pub seed: u64,
}

impl HashedScorer {
    pub fn probs(&self, context: &[TokenId]) -> Vec<f64> {
        let key: Vec<String> = context.iter().map(|t| t.0.to_string()).collect();
        let mut rng = stream_for(self.seed, &key.join(","));
        let raw: Vec<f64> = (0..self.vocab.len())
            .map(|_| 0.05 + uniform01(&mut rng))
            .collect();
        let z: f64 = raw.iter().sum();
        raw.iter().map(|r| r / z).collect()
    }
}

impl TokenScorer for HashedScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        Ok(self.probs(context).iter().map(|p| p.ln()).collect())
    }
}

/// The same distribution after every context.
pub struct FixedScorer {
    pub vocab: Vocab,
    pub logprobs: Vec<f64>,
}

impl TokenScorer for FixedScorer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logprobs(&self, _context: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        Ok(self.logprobs.clone())
    }
}

// ------------------------------------------------------------- truncation

fn ranked_desc(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    idx
}

fn renormalize(p: &[f64], keep: &[usize]) -> Vec<f64> {
    let z: f64 = keep.iter().map(|&i| p[i]).sum();
    (0..p.len())
        .map(|i| if keep.contains(&i) { p[i] / z } else { 0.0 })
        .collect()
}

fn smallest_prefix(p: &[f64], order: &[usize], mass: f64) -> Vec<usize> {
    let mut keep = Vec::new();
    let mut acc = 0.0;
    for &i in order {
        keep.push(i);
        acc += p[i];
        if acc >= mass - 1e-12 {
            break;
        }
    }
    keep
}

pub fn top_k_dist(p: &[f64], k: usize) -> Vec<f64> {
    let order = ranked_desc(p);
    renormalize(p, &order[..k.min(order.len())])
}

pub fn nucleus_dist(p: &[f64], top_p: f64) -> Vec<f64> {
    let order = ranked_desc(p);
    renormalize(p, &smallest_prefix(p, &order, top_p))
}

pub fn typical_dist(p: &[f64], tau: f64) -> Vec<f64> {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    let mut order: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let da = (-p[a].ln() - h).abs();
        let db = (-p[b].ln() - h).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    renormalize(p, &smallest_prefix(p, &order, tau))
}

// ------------------------------------------------------------------- BLEU

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].to_vec())
        .collect()
}

fn count_of(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Corpus BLEU-N, no smoothing, closest reference length (shorter on ties).
pub fn bleu_oracle(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], max_n: usize) -> f64 {
    let mut log_p = 0.0;
    for n in 1..=max_n {
        let mut num = 0usize;
        let mut den = 0usize;
        for (c, rs) in cands.iter().zip(refs) {
            let cg = grams(c, n);
            den += cg.len();
            let distinct: BTreeSet<Vec<String>> = cg.iter().cloned().collect();
            for g in distinct {
                let max_ref = rs
                    .iter()
                    .map(|r| count_of(&grams(r, n), &g))
                    .max()
                    .unwrap_or(0);
                num += count_of(&cg, &g).min(max_ref);
            }
        }
        if num == 0 || den == 0 {
            return 0.0;
        }
        log_p += (num as f64 / den as f64).ln();
    }
    let c: usize = cands.iter().map(Vec::len).sum();
    let mut r = 0usize;
    for (cand, rs) in cands.iter().zip(refs) {
        let mut best: Option<usize> = None;
        for x in rs.iter().map(Vec::len) {
            best = match best {
                None => Some(x),
                Some(b) => {
                    let (dx, db) = (x.abs_diff(cand.len()), b.abs_diff(cand.len()));
                    if dx < db || (dx == db && x < b) {
                        Some(x)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        r += best.unwrap_or(0);
    }
    if c == 0 {
        return 0.0;
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_p / max_n as f64).exp()
}

// ---------------------------------------------------------------- ROUGE-L

fn lcs_recursive(a: &[String], b: &[String], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let key = (a.len(), b.len());
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + lcs_recursive(&a[1..], &b[1..], memo)
    } else {
        lcs_recursive(&a[1..], b, memo).max(lcs_recursive(a, &b[1..], memo))
    };
    memo.insert(key, v);
    v
}

pub fn rouge_oracle(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    refs.iter()
        .map(|r| {
            let l = lcs_recursive(cand, r, &mut BTreeMap::new()) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / cand.len() as f64;
            let rc = l / r.len() as f64;
            (1.0 + beta2) * p * rc / (rc + beta2 * p)
        })
        .fold(0.0, f64::max)
}

// ----------------------------------------------------------------- METEOR

/// Exact then stem matching; each candidate word, left to right, continues
/// its predecessor's chunk when it can, else takes the leftmost free match.
pub fn meteor_oracle(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    refs.iter()
        .map(|r| {
            let mut partner: Vec<Option<usize>> = vec![None; cand.len()];
            let mut taken: BTreeSet<usize> = BTreeSet::new();
            for stage in 0..2 {
                let key = |w: &String| {
                    if stage == 0 {
                        w.clone()
                    } else {
                        stemmer.stem(w).into_owned()
                    }
                };
                let rk: Vec<String> = r.iter().map(key).collect();
                for i in 0..cand.len() {
                    if partner[i].is_some() {
                        continue;
                    }
                    let ck = key(&cand[i]);
                    let free: Vec<usize> = (0..r.len())
                        .filter(|j| !taken.contains(j) && rk[*j] == ck)
                        .collect();
                    let next = if i > 0 {
                        partner[i - 1].map(|j| j + 1)
                    } else {
                        None
                    };
                    let pick = match next {
                        Some(j) if free.contains(&j) => Some(j),
                        _ => free.first().copied(),
                    };
                    if let Some(j) = pick {
                        partner[i] = Some(j);
                        taken.insert(j);
                    }
                }
            }
            let pairs: Vec<(usize, usize)> = partner
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.map(|j| (i, j)))
                .collect();
            let m = pairs.len() as f64;
            if m == 0.0 {
                return 0.0;
            }
            let mut chunks = 1.0;
            for w in pairs.windows(2) {
                if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
                    chunks += 1.0;
                }
            }
            let p = m / cand.len() as f64;
            let rc = m / r.len() as f64;
            let f = 10.0 * p * rc / (rc + 9.0 * p);
            f * (1.0 - 0.5 * (chunks / m).powi(3))
        })
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------------ CIDEr

/// Mean over instances of `10 * (1/4) sum_n mean_refs cos(g_n(c), g_n(r))`,
/// TF = count / total n-grams, IDF from reference document frequency.
pub fn cider_oracle(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], smoothed: bool) -> f64 {
    let n_docs = refs.len() as f64;
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut per_n = 0.0;
        for n in 1..=4 {
            let df = |g: &Vec<String>| {
                refs.iter()
                    .filter(|set| set.iter().any(|r| grams(r, n).contains(g)))
                    .count() as f64
            };
            let idf = |g: &Vec<String>| {
                let d = df(g);
                if smoothed {
                    ((1.0 + n_docs) / (1.0 + d)).ln() + 1.0
                } else {
                    (n_docs / d.max(1.0)).ln()
                }
            };
            let vector = |t: &[String]| -> BTreeMap<Vec<String>, f64> {
                let gs = grams(t, n);
                let len = gs.len() as f64;
                let mut v = BTreeMap::new();
                for g in &gs {
                    v.insert(g.clone(), count_of(&gs, g) as f64 / len * idf(g));
                }
                v
            };
            let vc = vector(c);
            let mut sum = 0.0;
            for r in rs {
                let vr = vector(r);
                let dot: f64 = vc.iter().map(|(g, x)| x * vr.get(g).unwrap_or(&0.0)).sum();
                let na: f64 = vc.values().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = vr.values().map(|x| x * x).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    sum += dot / (na * nb);
                }
            }
            if !rs.is_empty() {
                per_n += sum / rs.len() as f64;
            }
        }
        total += 10.0 * per_n / 4.0;
    }
    if cands.is_empty() {
        0.0
    } else {
        total / cands.len() as f64
    }
}

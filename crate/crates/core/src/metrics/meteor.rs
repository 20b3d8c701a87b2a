//! METEOR without the synonym stage.
//!
//! Alignment runs two stages, exact surface match then Porter stem match
//! (Snowball English), each over words left unaligned by the previous
//! stage. Within a stage, candidate words are visited left to right; a word
//! aligns to the reference position right after its predecessor's partner
//! when that position is eligible (extending the current chunk), otherwise
//! to the leftmost eligible reference position.
//!
//! `F_mean = 10PR / (R + 9P)`, `penalty = 0.5 * (chunks / matches)^3`,
//! `score = F_mean * (1 - penalty)`. Scores differ from the Java METEOR
//! release, which also matches synonyms and paraphrases.

use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

pub fn stem(word: &str) -> String {
    stemmer().stem(word).into_owned()
}

/// Aligned `(candidate, reference)` position pairs sorted by candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeteorAlignment {
    pub pairs: Vec<(usize, usize)>,
}

impl MeteorAlignment {
    pub fn chunks(&self) -> usize {
        if self.pairs.is_empty() {
            return 0;
        }
        1 + self
            .pairs
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorStats {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
}

fn align_stage(
    cand_keys: &[String],
    ref_keys: &[String],
    cand_partner: &mut [Option<usize>],
    ref_used: &mut [bool],
) {
    for i in 0..cand_keys.len() {
        if cand_partner[i].is_some() {
            continue;
        }
        let eligible = |j: usize, used: &[bool]| !used[j] && ref_keys[j] == cand_keys[i];
        let follow = i
            .checked_sub(1)
            .and_then(|p| cand_partner[p])
            .map(|j| j + 1)
            .filter(|&j| j < ref_keys.len() && eligible(j, ref_used));
        let pick = follow.or_else(|| (0..ref_keys.len()).find(|&j| eligible(j, ref_used)));
        if let Some(j) = pick {
            cand_partner[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

pub fn align(candidate: &[String], reference: &[String]) -> MeteorAlignment {
    let mut partner = vec![None; candidate.len()];
    let mut used = vec![false; reference.len()];
    align_stage(candidate, reference, &mut partner, &mut used);
    let cs: Vec<String> = candidate.iter().map(|w| stem(w)).collect();
    let rs: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    align_stage(&cs, &rs, &mut partner, &mut used);
    MeteorAlignment {
        pairs: partner
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|j| (i, j)))
            .collect(),
    }
}

pub fn meteor_stats(candidate: &[String], reference: &[String]) -> MeteorStats {
    let alignment = align(candidate, reference);
    let m = alignment.pairs.len();
    let chunks = alignment.chunks();
    if m == 0 {
        return MeteorStats {
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            f_mean: 0.0,
            penalty: 0.0,
            score: 0.0,
        };
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    MeteorStats {
        matches: m,
        chunks,
        precision: p,
        recall: r,
        f_mean,
        penalty,
        score: f_mean * (1.0 - penalty),
    }
}

/// Best score over the references.
pub fn meteor_tokens(candidate: &[String], references: &[Vec<String>]) -> f64 {
    references
        .iter()
        .map(|r| meteor_stats(candidate, r).score)
        .fold(0.0, f64::max)
}

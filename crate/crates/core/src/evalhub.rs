//! e-ViL score composition, answer gating, common-subset comparison, human
//! accuracy bounds and error-annotation histograms.
//!
//! Scores here are on the reporting scale (x100). NGRAMScore is the harmonic
//! mean of the available members among ROUGE-L, METEOR, CIDEr and SPICE;
//! CIDEr enters with its reported value (corpus CIDEr x 100, up to 1000)
//! unless `cider_divisor` says otherwise. S_E = HM(NGRAMScore, BERTScore)
//! and S_O = S_T x S_E / 100.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::VqaInstance;
use crate::metrics::{
    explanation_metrics, harmonic_mean, normalize_answer, vqa_accuracy, vqa_accuracy_normalized,
    EvalItem, ExternalScores, IdfMode, MetricError, MetricValue,
};
use crate::rng::{stream_for, uniform01};
use crate::text::MetricTokenizer;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for instance {0}")]
    MissingPrediction(String),
    #[error("instance {id}: {reason}")]
    Validation { id: String, reason: String },
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `s_t * s_e / 100`.
pub fn overall_score(s_t: f64, s_e: f64) -> f64 {
    s_t * s_e / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvilConfig {
    /// Metric names eligible for NGRAMScore, in report order.
    pub ngram_members: Vec<String>,
    /// Applied to the reported CIDEr before it enters NGRAMScore.
    pub cider_divisor: f64,
    pub idf: IdfMode,
    pub tokenizer: MetricTokenizer,
}

impl Default for EvilConfig {
    fn default() -> Self {
        Self {
            ngram_members: ["ROUGE-L", "METEOR", "CIDEr", "SPICE"]
                .map(String::from)
                .to_vec(),
            cider_divisor: 1.0,
            idf: IdfMode::default(),
            tokenizer: MetricTokenizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvilScore {
    pub s_t: f64,
    /// Absent when no explanation passed the gate.
    pub s_e: Option<f64>,
    pub s_o: f64,
    pub ngram_score: Option<f64>,
    pub members: Vec<String>,
    /// Reported value of each NGRAMScore member as it entered the mean.
    pub member_values: BTreeMap<String, f64>,
    pub bertscore: Option<f64>,
    pub gated_count: usize,
    pub empty_gate: bool,
}

/// Composes the scores from reported member values (name -> x100 value).
///
/// Members not listed in `config.ngram_members` are ignored. Without
/// BERTScore, S_E falls back to NGRAMScore.
pub fn compose(
    s_t: f64,
    reported: &BTreeMap<String, f64>,
    bertscore: Option<f64>,
    gated_count: usize,
    config: &EvilConfig,
) -> EvilScore {
    if gated_count == 0 {
        return EvilScore {
            s_t,
            s_e: None,
            s_o: 0.0,
            ngram_score: None,
            members: Vec::new(),
            member_values: BTreeMap::new(),
            bertscore: None,
            gated_count,
            empty_gate: true,
        };
    }
    let mut members = Vec::new();
    let mut member_values = BTreeMap::new();
    for name in &config.ngram_members {
        if let Some(&v) = reported.get(name) {
            let v = if name == "CIDEr" {
                v / config.cider_divisor
            } else {
                v
            };
            members.push(name.clone());
            member_values.insert(name.clone(), v);
        }
    }
    let values: Vec<f64> = members.iter().map(|m| member_values[m]).collect();
    let ngram = (!values.is_empty()).then(|| harmonic_mean(&values));
    let s_e = match (ngram, bertscore) {
        (Some(n), Some(b)) => Some(harmonic_mean(&[n, b])),
        (Some(n), None) => Some(n),
        (None, b) => b,
    };
    EvilScore {
        s_t,
        s_e,
        s_o: s_e.map_or(0.0, |e| overall_score(s_t, e)),
        ngram_score: ngram,
        members,
        member_values,
        bertscore,
        gated_count,
        empty_gate: false,
    }
}

/// Explanation metrics over the gated `items` plus the composed score.
///
/// External scores are averaged over the gated ids and reported x100.
pub fn evil_score(
    s_t: f64,
    items: &[EvalItem],
    spice: Option<&ExternalScores>,
    bertscore: Option<&ExternalScores>,
    config: &EvilConfig,
) -> Result<(EvilScore, Vec<MetricValue>), EvalError> {
    if items.is_empty() {
        return Ok((compose(s_t, &BTreeMap::new(), None, 0, config), Vec::new()));
    }
    let metrics = explanation_metrics(items, &config.tokenizer, config.idf);
    let mut reported: BTreeMap<String, f64> = metrics
        .iter()
        .map(|m| (m.name.clone(), m.reported()))
        .collect();
    let ids = || items.iter().map(|i| i.id.as_str());
    if let Some(s) = spice {
        if let Some(v) = s.mean_over(ids())? {
            reported.insert("SPICE".into(), v * 100.0);
        }
    }
    let bert = match bertscore {
        Some(b) => b.mean_over(ids())?.map(|v| v * 100.0),
        None => None,
    };
    Ok((compose(s_t, &reported, bert, items.len(), config), metrics))
}

/// A model's answer for one instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Direct-answer correctness threshold on VQA accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaGate {
    /// accuracy > 0
    #[default]
    Positive,
    /// accuracy >= t
    AtLeast(f64),
}

impl DaGate {
    pub fn passes(self, accuracy: f64) -> bool {
        match self {
            DaGate::Positive => accuracy > 0.0,
            DaGate::AtLeast(t) => accuracy >= t,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Predicted option index equals the gold index.
    Mc,
    /// Predicted answer string scored against the direct answers.
    Da,
    /// MC when both the prediction and the instance carry an index, DA otherwise.
    #[default]
    Auto,
}

fn da_correct(inst: &VqaInstance, answer: &str, threshold: DaGate) -> Result<bool, EvalError> {
    if inst.direct_answers.is_empty() {
        // no gold answers: compare with the correct option instead
        return Ok(inst
            .correct_option()
            .is_some_and(|o| normalize_answer(o) == normalize_answer(answer)));
    }
    Ok(threshold.passes(vqa_accuracy(answer, &inst.direct_answers)?))
}

/// Whether `pred` answers `inst` correctly under `mode`.
pub fn is_correct(
    inst: &VqaInstance,
    pred: &Prediction,
    mode: GateMode,
    threshold: DaGate,
) -> Result<bool, EvalError> {
    let mc = |idx: usize| inst.mc_correct_index == Some(idx);
    match mode {
        GateMode::Mc => match (pred.mc_index, &pred.answer) {
            (Some(i), _) => Ok(mc(i)),
            (None, Some(a)) => Ok(inst
                .correct_option()
                .is_some_and(|o| normalize_answer(o) == normalize_answer(a))),
            (None, None) => Err(EvalError::MissingPrediction(inst.id.clone())),
        },
        GateMode::Da => match &pred.answer {
            Some(a) => da_correct(inst, a, threshold),
            None => Err(EvalError::MissingPrediction(inst.id.clone())),
        },
        GateMode::Auto => match (pred.mc_index, &pred.answer) {
            (Some(i), _) if inst.mc_correct_index.is_some() => Ok(mc(i)),
            (_, Some(a)) => da_correct(inst, a, threshold),
            _ => Err(EvalError::MissingPrediction(inst.id.clone())),
        },
    }
}

/// Ids (in instance order) whose prediction is correct.
pub fn gate(
    instances: &[VqaInstance],
    predictions: &[Prediction],
    mode: GateMode,
    threshold: DaGate,
) -> Result<Vec<String>, EvalError> {
    let by_id: HashMap<&str, &Prediction> =
        predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut out = Vec::new();
    for inst in instances {
        let pred = by_id
            .get(inst.id.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(inst.id.clone()))?;
        if is_correct(inst, pred, mode, threshold)? {
            out.push(inst.id.clone());
        }
    }
    Ok(out)
}

/// Exact intersection; empty for no sets.
pub fn common_subset(sets: &[BTreeSet<String>]) -> BTreeSet<String> {
    let Some((first, rest)) = sets.split_first() else {
        return BTreeSet::new();
    };
    first
        .iter()
        .filter(|id| rest.iter().all(|s| s.contains(*id)))
        .cloned()
        .collect()
}

/// One model's outputs for a comparison: S_T and explanations for the
/// instances it answered correctly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutputs {
    pub name: String,
    pub s_t: f64,
    pub explanations: Vec<EvalItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub common_ids: Vec<String>,
    pub scores: Vec<(String, EvilScore)>,
}

/// Scores every model on the ids all of them answered correctly.
pub fn compare(
    models: &[ModelOutputs],
    spice: Option<&ExternalScores>,
    bertscore: Option<&ExternalScores>,
    config: &EvilConfig,
) -> Result<Comparison, EvalError> {
    let sets: Vec<BTreeSet<String>> = models
        .iter()
        .map(|m| m.explanations.iter().map(|e| e.id.clone()).collect())
        .collect();
    let common = common_subset(&sets);
    let mut scores = Vec::new();
    for m in models {
        let items: Vec<EvalItem> = m
            .explanations
            .iter()
            .filter(|e| common.contains(&e.id))
            .cloned()
            .collect();
        let (score, _) = evil_score(m.s_t, &items, spice, bertscore, config)?;
        scores.push((m.name.clone(), score));
    }
    Ok(Comparison {
        common_ids: common.into_iter().collect(),
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    Best,
    Average,
    Worst,
}

impl std::str::FromStr for BoundMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "best" => Ok(BoundMode::Best),
            "average" | "avg" => Ok(BoundMode::Average),
            "worst" => Ok(BoundMode::Worst),
            other => Err(format!("unknown bound mode {other:?}")),
        }
    }
}

/// What leaves the gold set once an answer is picked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalPolicy {
    /// One annotator's answer leaves; the pick is scored against the rest.
    #[default]
    SingleOccurrence,
    /// Every answer equal to the pick leaves, so the pick can never match.
    AllOccurrences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceBound {
    pub id: String,
    pub pick: String,
    pub remaining: usize,
    pub accuracy: f64,
    /// Removal emptied the gold set; scored 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBounds {
    pub mode: BoundMode,
    pub removal: RemovalPolicy,
    pub seed: u64,
    /// Mean accuracy x100.
    pub value: f64,
    pub degenerate_count: usize,
    pub per_instance: Vec<InstanceBound>,
}

/// Picks a normalized gold answer. Frequency ties go to the earliest first
/// occurrence; Average draws one annotator uniformly.
fn pick_answer(gold: &[String], mode: BoundMode, id: &str, seed: u64) -> String {
    let mut classes: Vec<(&str, usize)> = Vec::new();
    for g in gold {
        match classes.iter_mut().find(|(a, _)| *a == g) {
            Some((_, n)) => *n += 1,
            None => classes.push((g, 1)),
        }
    }
    let pick = match mode {
        BoundMode::Best => {
            classes
                .iter()
                .fold(classes[0], |b, &c| if c.1 > b.1 { c } else { b })
                .0
        }
        BoundMode::Worst => {
            classes
                .iter()
                .fold(classes[0], |b, &c| if c.1 < b.1 { c } else { b })
                .0
        }
        BoundMode::Average => {
            let mut rng = stream_for(seed, id);
            let i = ((uniform01(&mut rng) * gold.len() as f64) as usize).min(gold.len() - 1);
            &gold[i]
        }
    };
    pick.to_string()
}

/// Human accuracy bound over the instances that carry direct answers.
pub fn human_bounds(
    instances: &[VqaInstance],
    mode: BoundMode,
    removal: RemovalPolicy,
    seed: u64,
) -> Result<HumanBounds, EvalError> {
    let mut per_instance = Vec::new();
    for inst in instances.iter().filter(|i| !i.direct_answers.is_empty()) {
        let gold: Vec<String> = inst
            .direct_answers
            .iter()
            .map(|a| normalize_answer(a))
            .collect();
        let pick = pick_answer(&gold, mode, &inst.id, seed);
        let remaining: Vec<String> = match removal {
            RemovalPolicy::AllOccurrences => gold.iter().filter(|g| **g != pick).cloned().collect(),
            RemovalPolicy::SingleOccurrence => {
                let mut rest = gold.clone();
                let at = rest
                    .iter()
                    .position(|g| *g == pick)
                    .expect("pick comes from gold");
                rest.remove(at);
                rest
            }
        };
        let degenerate = remaining.is_empty();
        let accuracy = if degenerate {
            0.0
        } else {
            vqa_accuracy_normalized(&pick, &remaining)?
        };
        per_instance.push(InstanceBound {
            id: inst.id.clone(),
            pick,
            remaining: remaining.len(),
            accuracy,
            degenerate,
        });
    }
    let n = per_instance.len();
    let value = if n == 0 {
        0.0
    } else {
        per_instance.iter().map(|b| b.accuracy).sum::<f64>() / n as f64 * 100.0
    };
    Ok(HumanBounds {
        mode,
        removal,
        seed,
        value,
        degenerate_count: per_instance.iter().filter(|b| b.degenerate).count(),
        per_instance,
    })
}

/// Mean of the bound over `seeds`; only Average depends on the seed.
pub fn human_bounds_mean(
    instances: &[VqaInstance],
    mode: BoundMode,
    removal: RemovalPolicy,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for seed in seeds {
        sum += human_bounds(instances, mode, removal, seed)?.value;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    Knowledge,
    Visual,
    SemanticDisassociation,
    Metric,
    Dataset,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::Knowledge,
        ErrorCategory::Visual,
        ErrorCategory::SemanticDisassociation,
        ErrorCategory::Metric,
        ErrorCategory::Dataset,
    ];
}

impl std::str::FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "knowledge" => Ok(ErrorCategory::Knowledge),
            "visual" => Ok(ErrorCategory::Visual),
            "semanticdisassociation" | "semantic" => Ok(ErrorCategory::SemanticDisassociation),
            "metric" => Ok(ErrorCategory::Metric),
            "dataset" => Ok(ErrorCategory::Dataset),
            _ => Err(format!("unknown error category {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub id: String,
    pub category: ErrorCategory,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBin {
    pub category: ErrorCategory,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub total: usize,
    pub bins: Vec<ErrorBin>,
}

/// Histogram in category order. Repeated ids count once; a repeated id with
/// a different category is rejected.
pub fn error_report(annotations: &[ErrorAnnotation]) -> Result<ErrorReport, EvalError> {
    let mut seen: BTreeMap<&str, ErrorCategory> = BTreeMap::new();
    for a in annotations {
        if let Some(prev) = seen.insert(&a.id, a.category) {
            if prev != a.category {
                return Err(EvalError::Validation {
                    id: a.id.clone(),
                    reason: format!("annotated as both {prev:?} and {:?}", a.category),
                });
            }
        }
    }
    let total = seen.len();
    let bins = ErrorCategory::ALL
        .iter()
        .map(|&category| {
            let count = seen.values().filter(|&&c| c == category).count();
            let percent = if total == 0 {
                0.0
            } else {
                count as f64 * 100.0 / total as f64
            };
            ErrorBin {
                category,
                count,
                percent,
            }
        })
        .collect();
    Ok(ErrorReport { total, bins })
}

/// Reads `id,category[,note]` CSV; a leading `id,...` header is skipped.
pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<ErrorAnnotation>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 1;
        let err = |message: String| EvalError::Parse {
            origin: origin.to_string(),
            line,
            message,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if idx == 0 && rec.get(0) == Some("id") {
            continue;
        }
        if rec.len() < 2 || rec.len() > 3 {
            return Err(err(format!("expected 2 or 3 fields, got {}", rec.len())));
        }
        out.push(ErrorAnnotation {
            id: rec[0].to_string(),
            category: rec[1].parse().map_err(err)?,
            note: rec.get(2).unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<ErrorAnnotation>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dataset;

    fn reported(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn overall_from_table_rows() {
        assert!((overall_score(74.59, 50.82) - 37.91).abs() < 0.01);
        assert!((overall_score(56.66, 40.27) - 22.82).abs() < 0.01);
    }

    #[test]
    fn explanation_score_from_published_members() {
        // (ROUGE-L, METEOR, CIDEr, SPICE, BERTScore) -> published S_E
        let rows = [
            ((52.56, 24.83, 101.09, 23.33, 88.21), 50.82),
            ((52.23, 24.06, 104.39, 22.88, 87.86), 50.15),
            ((48.51, 23.56, 86.76, 22.46, 85.96), 48.29),
            ((29.53, 17.54, 47.33, 26.45, 81.91), 40.27),
            ((28.87, 16.67, 48.14, 27.36, 81.77), 39.82),
            ((35.12, 20.29, 50.35, 19.13, 85.40), 40.67),
        ];
        let cfg = EvilConfig::default();
        for ((r, m, c, s, b), want) in rows {
            let got = compose(
                70.0,
                &reported(&[
                    ("ROUGE-L", r),
                    ("METEOR", m),
                    ("CIDEr", c),
                    ("SPICE", s),
                    ("BLEU-4", 1.0),
                ]),
                Some(b),
                10,
                &cfg,
            );
            assert_eq!(got.members, ["ROUGE-L", "METEOR", "CIDEr", "SPICE"]);
            assert!((got.s_e.unwrap() - want).abs() < 0.011, "{got:?} vs {want}");
        }
    }

    #[test]
    fn ceiling_and_empty_gate() {
        let all = reported(&[
            ("ROUGE-L", 100.0),
            ("METEOR", 100.0),
            ("CIDEr", 100.0),
            ("SPICE", 100.0),
        ]);
        let s = compose(100.0, &all, Some(100.0), 3, &EvilConfig::default());
        assert!((s.s_o - 100.0).abs() < 1e-9);
        let e = compose(80.0, &all, Some(100.0), 0, &EvilConfig::default());
        assert!(e.empty_gate && e.s_e.is_none() && e.s_o == 0.0);
    }

    #[test]
    fn missing_bertscore_uses_ngram() {
        let s = compose(
            50.0,
            &reported(&[("ROUGE-L", 40.0), ("METEOR", 40.0)]),
            None,
            2,
            &EvilConfig::default(),
        );
        assert_eq!(s.s_e, Some(40.0));
        assert_eq!(s.s_o, 20.0);
    }

    fn mc(id: &str, correct: usize) -> VqaInstance {
        let mut i = VqaInstance::new(id, Dataset::AOkVqa, "q?");
        i.mc_options = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        i.mc_correct_index = Some(correct);
        i
    }

    fn pred(id: &str, idx: usize) -> Prediction {
        Prediction {
            id: id.into(),
            mc_index: Some(idx),
            answer: None,
        }
    }

    #[test]
    fn gate_mixed_five() {
        let insts: Vec<_> = (0..5).map(|i| mc(&format!("q{i}"), i % 4)).collect();
        let preds = vec![
            pred("q0", 0),
            pred("q1", 0),
            pred("q2", 2),
            pred("q3", 1),
            pred("q4", 0),
        ];
        let got = gate(&insts, &preds, GateMode::Mc, DaGate::Positive).unwrap();
        assert_eq!(got, ["q0", "q2", "q4"]);
        assert!(matches!(
            gate(&insts, &preds[..4], GateMode::Mc, DaGate::Positive),
            Err(EvalError::MissingPrediction(id)) if id == "q4"
        ));
    }

    #[test]
    fn da_gate_thresholds() {
        let mut i = VqaInstance::new("d", Dataset::OkVqa, "q?");
        i.direct_answers = ["cat"]
            .iter()
            .chain(["dog"; 9].iter())
            .map(|s| s.to_string())
            .collect();
        let p = Prediction {
            id: "d".into(),
            mc_index: None,
            answer: Some("Cat".into()),
        };
        assert!(is_correct(&i, &p, GateMode::Da, DaGate::Positive).unwrap());
        assert!(!is_correct(&i, &p, GateMode::Da, DaGate::AtLeast(1.0 / 3.0)).unwrap());
    }

    #[test]
    fn common_subset_cases() {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(common_subset(&[s(&["a", "b"])]), s(&["a", "b"]));
        assert!(common_subset(&[s(&["a"]), s(&["b"])]).is_empty());
        assert_eq!(
            common_subset(&[
                s(&["a", "b", "c", "d"]),
                s(&["b", "c", "d", "e"]),
                s(&["c", "d", "x"])
            ]),
            s(&["c", "d"])
        );
    }

    fn da(id: &str, gold: &[&str]) -> VqaInstance {
        let mut i = VqaInstance::new(id, Dataset::OkVqa, "q?");
        i.direct_answers = gold.iter().map(|s| s.to_string()).collect();
        i
    }

    #[test]
    fn all_occurrence_removal_trace() {
        let mut gold = vec!["cat"; 6];
        gold.extend(["dog"; 4]);
        let b = human_bounds(
            &[da("x", &gold)],
            BoundMode::Best,
            RemovalPolicy::AllOccurrences,
            0,
        )
        .unwrap();
        assert_eq!(b.per_instance[0].pick, "cat");
        assert_eq!(b.per_instance[0].remaining, 4);
        assert_eq!(b.value, 0.0);
        let all_same = human_bounds(
            &[da("y", &["cat"; 10])],
            BoundMode::Best,
            RemovalPolicy::AllOccurrences,
            0,
        )
        .unwrap();
        assert_eq!(all_same.degenerate_count, 1);
    }

    #[test]
    fn single_occurrence_removal_trace() {
        let mut gold = vec!["cat"; 6];
        gold.extend(["dog"; 4]);
        let inst = [da("x", &gold)];
        let best =
            human_bounds(&inst, BoundMode::Best, RemovalPolicy::SingleOccurrence, 0).unwrap();
        // cat vs 5 cats among 9 -> saturated
        assert!((best.value - 100.0).abs() < 1e-9);
        let worst =
            human_bounds(&inst, BoundMode::Worst, RemovalPolicy::SingleOccurrence, 0).unwrap();
        // dog vs 3 dogs among 9: leave-one-out gives (6 * 1 + 3 * 2/3) / 9
        assert!((worst.value - 100.0 * 8.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn distinct_answers_tie_best_equals_worst() {
        let gold: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let g: Vec<&str> = gold.iter().map(String::as_str).collect();
        let inst = [da("x", &g)];
        for removal in [
            RemovalPolicy::SingleOccurrence,
            RemovalPolicy::AllOccurrences,
        ] {
            let b = human_bounds(&inst, BoundMode::Best, removal, 0).unwrap();
            let w = human_bounds(&inst, BoundMode::Worst, removal, 0).unwrap();
            assert_eq!(b.per_instance[0].pick, w.per_instance[0].pick);
        }
    }

    #[test]
    fn average_reproducible() {
        let inst = [da("x", &["a", "b", "b", "c", "c", "c", "d", "d", "d", "d"])];
        let a = human_bounds(&inst, BoundMode::Average, RemovalPolicy::default(), 7).unwrap();
        let b = human_bounds(&inst, BoundMode::Average, RemovalPolicy::default(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_histogram() {
        assert!(error_report(&[])
            .unwrap()
            .bins
            .iter()
            .all(|b| b.count == 0 && b.percent == 0.0));
        let anns: Vec<ErrorAnnotation> = (0..100)
            .map(|i| ErrorAnnotation {
                id: format!("e{i}"),
                category: ErrorCategory::ALL[i % 3],
                note: String::new(),
            })
            .collect();
        let r = error_report(&anns).unwrap();
        assert_eq!(r.total, 100);
        assert!((r.bins.iter().map(|b| b.percent).sum::<f64>() - 100.0).abs() < 1e-9);
        let mut dup = anns.clone();
        dup.push(ErrorAnnotation {
            id: "e0".into(),
            category: ErrorCategory::Dataset,
            note: String::new(),
        });
        assert!(matches!(
            error_report(&dup),
            Err(EvalError::Validation { .. })
        ));
    }

    #[test]
    fn annotation_csv() {
        let anns = parse_annotations(
            "id,category,note\nq1,Knowledge,x\nq2,semantic disassociation\n",
            "mem",
        )
        .unwrap();
        assert_eq!(anns[1].category, ErrorCategory::SemanticDisassociation);
        assert!(matches!(
            parse_annotations("q1,bogus\n", "mem"),
            Err(EvalError::Parse { line: 1, .. })
        ));
    }
}

//! Canonical VQA records, dataset ingestion and train/validation splits.
//!
//! Every upstream layout is normalized into [`VqaInstance`] once and written
//! as canonical JSONL; later stages never look at upstream formats again.
//! Answers, questions and explanations are kept verbatim.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::jsonl;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "OKVQA")]
    OkVqa,
    #[serde(rename = "AOKVQA")]
    AOkVqa,
    #[serde(rename = "VCR")]
    Vcr,
    #[serde(rename = "VQAX")]
    VqaX,
    #[serde(rename = "SYNTH")]
    Synth,
}

impl Dataset {
    pub const ALL: [Dataset; 5] = [
        Dataset::OkVqa,
        Dataset::AOkVqa,
        Dataset::Vcr,
        Dataset::VqaX,
        Dataset::Synth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::OkVqa => "OKVQA",
            Dataset::AOkVqa => "AOKVQA",
            Dataset::Vcr => "VCR",
            Dataset::VqaX => "VQAX",
            Dataset::Synth => "SYNTH",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_uppercase())
            .collect();
        Dataset::ALL
            .into_iter()
            .find(|d| d.as_str() == key)
            .ok_or_else(|| format!("unknown dataset {s:?}"))
    }
}

/// An object label with its attributes, as produced by an external detector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectAnnotation {
    pub label: String,
    pub attributes: Vec<String>,
}

/// A referenced entity's box; `bbox` is `[x0, y0, x1, y1]`, half-open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRegion {
    pub entity_id: String,
    pub bbox: [u32; 4],
    pub color_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaInstance {
    pub id: String,
    pub dataset: Dataset,
    pub image_ref: String,
    pub question: String,
    pub direct_answers: Vec<String>,
    pub mc_options: Vec<String>,
    pub mc_correct_index: Option<usize>,
    pub explanations: Vec<String>,
    pub objects: Vec<ObjectAnnotation>,
    pub regions: Vec<EntityRegion>,
}

impl VqaInstance {
    /// Minimal record; callers fill in the optional parts.
    pub fn new(id: impl Into<String>, dataset: Dataset, question: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            dataset,
            image_ref: String::new(),
            question: question.into(),
            direct_answers: Vec::new(),
            mc_options: Vec::new(),
            mc_correct_index: None,
            explanations: Vec::new(),
            objects: Vec::new(),
            regions: Vec::new(),
        }
    }

    pub fn correct_option(&self) -> Option<&str> {
        self.mc_correct_index
            .and_then(|i| self.mc_options.get(i))
            .map(String::as_str)
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| {
            Err(CorpusError::Validation {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        if let Some(idx) = self.mc_correct_index {
            if idx >= self.mc_options.len() {
                return fail(format!(
                    "mc_correct_index {idx} out of range for {} options",
                    self.mc_options.len()
                ));
            }
        }
        if self.dataset == Dataset::OkVqa && !self.explanations.is_empty() {
            return fail("OKVQA records carry no explanations".into());
        }
        if self.direct_answers.iter().any(|a| a.is_empty()) {
            return fail("empty direct answer".into());
        }
        if self.explanations.len() > 4 {
            return fail(format!(
                "{} explanations (at most 4)",
                self.explanations.len()
            ));
        }
        let mut colors: HashMap<&str, u32> = HashMap::new();
        for r in &self.regions {
            let [x0, y0, x1, y1] = r.bbox;
            if x0 >= x1 || y0 >= y1 {
                return fail(format!("degenerate bbox {:?} for {}", r.bbox, r.entity_id));
            }
            if let Some(prev) = colors.insert(&r.entity_id, r.color_index) {
                if prev != r.color_index {
                    return fail(format!("entity {} has two colors", r.entity_id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid record {id}: {reason}")]
    Validation { id: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<jsonl::JsonlError> for CorpusError {
    fn from(e: jsonl::JsonlError) -> Self {
        match e {
            jsonl::JsonlError::Io { path, source } => CorpusError::Io { path, source },
            jsonl::JsonlError::Parse { path, line, source } => CorpusError::Parse {
                path,
                line,
                message: source.to_string(),
            },
        }
    }
}

/// Validates every record and rejects duplicate ids.
pub fn validate_all(instances: &[VqaInstance]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for inst in instances {
        inst.validate()?;
        if !seen.insert(inst.id.as_str()) {
            return Err(CorpusError::Validation {
                id: inst.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    Ok(())
}

/// Loads canonical JSONL or a recognized upstream layout for `dataset`.
pub fn load_dataset(path: &Path, dataset: Dataset) -> Result<Vec<VqaInstance>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_from_str(&text, dataset, &path.display().to_string())
}

pub fn load_from_str(
    text: &str,
    dataset: Dataset,
    origin: &str,
) -> Result<Vec<VqaInstance>, CorpusError> {
    let Some((first_line_no, first)) = text.lines().enumerate().find(|(_, l)| !l.trim().is_empty())
    else {
        return Ok(Vec::new());
    };
    let first_value: Option<Value> = serde_json::from_str(first).ok();
    let canonical = matches!(
        &first_value,
        Some(Value::Object(m)) if m.contains_key("id") && m.contains_key("dataset")
    );
    let instances = if canonical {
        let parsed: Vec<VqaInstance> = jsonl::parse_str(text, origin)?;
        if let Some(bad) = parsed.iter().find(|i| i.dataset != dataset) {
            return Err(CorpusError::Validation {
                id: bad.id.clone(),
                reason: format!("dataset {} where {} was requested", bad.dataset, dataset),
            });
        }
        parsed
    } else {
        upstream::parse(text, dataset, origin, first_line_no + 1)?
    };
    validate_all(&instances)?;
    Ok(instances)
}

pub fn write_dataset(path: &Path, instances: &[VqaInstance]) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, instances)?)
}

/// Train/validation split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self, String> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(format!("train fraction {train_fraction} not in (0, 1)"));
        }
        Ok(Self {
            train_fraction,
            seed,
        })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.95,
            seed: 0,
        }
    }
}

/// Uniform random split; `|train| = round(fraction * N)`.
///
/// Both sides keep the input's relative order.
pub fn split(instances: &[VqaInstance], spec: &SplitSpec) -> (Vec<VqaInstance>, Vec<VqaInstance>) {
    let n = instances.len();
    let n_train = ((spec.train_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(spec.seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (inst, t) in instances.iter().zip(in_train) {
        if t {
            train.push(inst.clone());
        } else {
            val.push(inst.clone());
        }
    }
    (train, val)
}

mod upstream {
    //! Upstream annotation layouts.
    //!
    //! * OKVQA: one JSON object `{"questions": [...], "annotations": [...]}`
    //!   (the VQA question and annotation files merged).
    //! * AOKVQA: the released JSON array with `question_id`, `choices`,
    //!   `correct_choice_idx`, `direct_answers`, `rationales`.
    //! * VQAX: JSON object keyed by question id with `question`, `answers`,
    //!   `explanation`, `image_name`.
    //! * VCR: JSONL lines with tokenized `question`, `answer_choices`,
    //!   `rationale_choices`, entity references as index lists into
    //!   `objects`, and optional inline `boxes`.

    use super::*;

    fn parse_err(origin: &str, line: usize, message: impl Into<String>) -> CorpusError {
        CorpusError::Parse {
            path: origin.to_string(),
            line,
            message: message.into(),
        }
    }

    fn as_id(v: &Value) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }

    fn str_list(v: Option<&Value>) -> Vec<String> {
        v.and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(|x| x.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn answer_list(v: Option<&Value>) -> Vec<String> {
        v.and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(|x| match x {
                        Value::String(s) => Some(s.clone()),
                        Value::Object(o) => {
                            o.get("answer").and_then(Value::as_str).map(str::to_string)
                        }
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub(super) fn parse(
        text: &str,
        dataset: Dataset,
        origin: &str,
        first_line: usize,
    ) -> Result<Vec<VqaInstance>, CorpusError> {
        match dataset {
            Dataset::Vcr => parse_vcr(text, origin),
            _ => {
                let root: Value = serde_json::from_str(text)
                    .map_err(|e| parse_err(origin, e.line().max(first_line), e.to_string()))?;
                match dataset {
                    Dataset::OkVqa => parse_okvqa(&root, origin),
                    Dataset::AOkVqa => parse_aokvqa(&root, origin),
                    Dataset::VqaX => parse_vqax(&root, origin),
                    Dataset::Synth | Dataset::Vcr => Err(parse_err(
                        origin,
                        first_line,
                        format!("{dataset} has no upstream layout; expected canonical JSONL"),
                    )),
                }
            }
        }
    }

    fn parse_okvqa(root: &Value, origin: &str) -> Result<Vec<VqaInstance>, CorpusError> {
        let questions = root
            .get("questions")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(origin, 1, "missing \"questions\" array"))?;
        let annotations = root
            .get("annotations")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(origin, 1, "missing \"annotations\" array"))?;
        let mut answers: HashMap<String, Vec<String>> = HashMap::new();
        for a in annotations {
            let qid = a
                .get("question_id")
                .and_then(as_id)
                .ok_or_else(|| parse_err(origin, 1, "annotation without question_id"))?;
            answers.insert(qid, answer_list(a.get("answers")));
        }
        questions
            .iter()
            .map(|q| {
                let qid = q
                    .get("question_id")
                    .and_then(as_id)
                    .ok_or_else(|| parse_err(origin, 1, "question without question_id"))?;
                let mut inst = VqaInstance::new(
                    qid.clone(),
                    Dataset::OkVqa,
                    q.get("question")
                        .and_then(Value::as_str)
                        .unwrap_or_default(),
                );
                inst.image_ref = q.get("image_id").and_then(as_id).unwrap_or_default();
                inst.direct_answers = answers.remove(&qid).unwrap_or_default();
                Ok(inst)
            })
            .collect()
    }

    fn parse_aokvqa(root: &Value, origin: &str) -> Result<Vec<VqaInstance>, CorpusError> {
        let items = root
            .as_array()
            .ok_or_else(|| parse_err(origin, 1, "expected a JSON array of questions"))?;
        items
            .iter()
            .map(|q| {
                let qid = q
                    .get("question_id")
                    .and_then(as_id)
                    .ok_or_else(|| parse_err(origin, 1, "record without question_id"))?;
                let mut inst = VqaInstance::new(
                    qid,
                    Dataset::AOkVqa,
                    q.get("question")
                        .and_then(Value::as_str)
                        .unwrap_or_default(),
                );
                inst.image_ref = q.get("image_id").and_then(as_id).unwrap_or_default();
                inst.mc_options = str_list(q.get("choices"));
                inst.mc_correct_index = q
                    .get("correct_choice_idx")
                    .and_then(Value::as_u64)
                    .map(|i| i as usize);
                inst.direct_answers = str_list(q.get("direct_answers"));
                inst.explanations = str_list(q.get("rationales"));
                Ok(inst)
            })
            .collect()
    }

    fn parse_vqax(root: &Value, origin: &str) -> Result<Vec<VqaInstance>, CorpusError> {
        let items = root
            .as_object()
            .ok_or_else(|| parse_err(origin, 1, "expected a JSON object keyed by question id"))?;
        let mut out: Vec<VqaInstance> = items
            .iter()
            .map(|(qid, q)| {
                let mut inst = VqaInstance::new(
                    qid.clone(),
                    Dataset::VqaX,
                    q.get("question")
                        .and_then(Value::as_str)
                        .unwrap_or_default(),
                );
                inst.image_ref = q
                    .get("image_name")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string();
                inst.direct_answers = answer_list(q.get("answers"));
                inst.explanations = str_list(q.get("explanation"));
                inst
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    /// Names for VCR entities: `Person1`, `Person2`, `Car1`, ... numbered
    /// per label in object order.
    fn vcr_entity_names(objects: &[String]) -> Vec<String> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        objects
            .iter()
            .map(|label| {
                let c = counts.entry(label.as_str()).or_insert(0);
                *c += 1;
                let mut chars = label.chars();
                let cap: String = match chars.next() {
                    Some(f) => f.to_uppercase().chain(chars).collect(),
                    None => String::new(),
                };
                format!("{cap}{c}")
            })
            .collect()
    }

    fn vcr_text(tokens: &Value, names: &[String], used: &mut Vec<usize>) -> Option<String> {
        let mut words = Vec::new();
        for tok in tokens.as_array()? {
            match tok {
                Value::String(s) => words.push(s.clone()),
                Value::Array(refs) => {
                    let mut parts = Vec::new();
                    for r in refs {
                        let idx = r.as_u64()? as usize;
                        parts.push(names.get(idx)?.clone());
                        if !used.contains(&idx) {
                            used.push(idx);
                        }
                    }
                    words.push(parts.join(" and "));
                }
                _ => return None,
            }
        }
        Some(words.join(" "))
    }

    fn parse_vcr(text: &str, origin: &str) -> Result<Vec<VqaInstance>, CorpusError> {
        let mut out = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Value = serde_json::from_str(line)
                .map_err(|e| parse_err(origin, line_no, e.to_string()))?;
            let bad = |what: &str| parse_err(origin, line_no, format!("VCR record: bad {what}"));
            let id = rec
                .get("annot_id")
                .and_then(as_id)
                .ok_or_else(|| bad("annot_id"))?;
            let objects = str_list(rec.get("objects"));
            let names = vcr_entity_names(&objects);
            let mut used = Vec::new();
            let question = rec
                .get("question")
                .and_then(|q| vcr_text(q, &names, &mut used))
                .ok_or_else(|| bad("question"))?;
            let options = rec
                .get("answer_choices")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("answer_choices"))?
                .iter()
                .map(|c| vcr_text(c, &names, &mut used))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("answer_choices"))?;
            let label = rec
                .get("answer_label")
                .and_then(Value::as_u64)
                .map(|v| v as usize);
            let mut explanations = Vec::new();
            if let (Some(rats), Some(rl)) = (
                rec.get("rationale_choices").and_then(Value::as_array),
                rec.get("rationale_label").and_then(Value::as_u64),
            ) {
                let r = rats
                    .get(rl as usize)
                    .ok_or_else(|| bad("rationale_label"))?;
                explanations.push(vcr_text(r, &names, &mut used).ok_or_else(|| bad("rationale"))?);
            }
            let mut inst = VqaInstance::new(id, Dataset::Vcr, question);
            inst.image_ref = rec
                .get("img_fn")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            inst.mc_options = options;
            inst.mc_correct_index = label;
            inst.explanations = explanations;
            inst.objects = objects
                .iter()
                .map(|l| ObjectAnnotation {
                    label: l.clone(),
                    attributes: Vec::new(),
                })
                .collect();
            if let Some(boxes) = rec.get("boxes").and_then(Value::as_array) {
                used.sort_unstable();
                for &obj in &used {
                    let Some(b) = boxes.get(obj).and_then(Value::as_array) else {
                        continue;
                    };
                    let coords: Vec<f64> = b.iter().take(4).filter_map(Value::as_f64).collect();
                    if coords.len() != 4 {
                        return Err(bad("boxes"));
                    }
                    let c = |v: f64| v.max(0.0).round() as u32;
                    inst.regions.push(EntityRegion {
                        entity_id: names[obj].clone(),
                        bbox: [c(coords[0]), c(coords[1]), c(coords[2]), c(coords[3])],
                        color_index: obj as u32,
                    });
                }
            }
            out.push(inst);
        }
        Ok(out)
    }
}

//! Multitask example construction with artificial prompt tokens.
//!
//! Each training example's input starts with a prompt token that names the
//! source dataset and the generation setting, so a single model can serve
//! every (dataset, task) pair.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, VqaInstance};
use crate::rng;
use crate::text::is_reserved_marker;

pub const DEFAULT_SEPARATOR: &str = "<#SEP#>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskShape {
    #[serde(rename = "Q_TO_A")]
    QToA,
    #[serde(rename = "QA_TO_E")]
    QaToE,
    #[serde(rename = "Q_TO_AE")]
    QToAe,
}

impl TaskShape {
    pub const ALL: [TaskShape; 3] = [TaskShape::QToA, TaskShape::QaToE, TaskShape::QToAe];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskShape::QToA => "Q_TO_A",
            TaskShape::QaToE => "QA_TO_E",
            TaskShape::QToAe => "Q_TO_AE",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            TaskShape::QToA => "q2a",
            TaskShape::QaToE => "qa2e",
            TaskShape::QToAe => "q2ae",
        }
    }
}

impl fmt::Display for TaskShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskShape::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s) || t.short_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task {s:?} (expected q2a, qa2e or q2ae)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AugmentError {
    #[error("no prompt token registered for ({dataset}, {task})")]
    MissingPrompt { dataset: Dataset, task: TaskShape },
    #[error("record {id}: answer or explanation already contains the separator {separator:?}")]
    SeparatorCollision { id: String, separator: String },
    #[error("prompt token {token:?} already registered for ({dataset}, {task})")]
    DuplicatePromptToken {
        token: String,
        dataset: Dataset,
        task: TaskShape,
    },
    #[error("prompt token {0:?} is not of the form <#NAME#>")]
    MalformedPromptToken(String),
    #[error("separator {separator:?} not found in generated text")]
    NoSeparator { separator: String },
}

/// Injective map from (dataset, task) to prompt token.
///
/// Datasets without their own tokens can be aliased onto another dataset's
/// tokens; by default VQA-X and the synthetic corpus reuse A-OKVQA's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRegistry {
    tokens: BTreeMap<(Dataset, TaskShape), String>,
    aliases: HashMap<Dataset, Dataset>,
}

impl PromptRegistry {
    pub fn empty() -> Self {
        Self {
            tokens: BTreeMap::new(),
            aliases: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        dataset: Dataset,
        task: TaskShape,
        token: impl Into<String>,
    ) -> Result<(), AugmentError> {
        let token = token.into();
        if !is_reserved_marker(&token) {
            return Err(AugmentError::MalformedPromptToken(token));
        }
        if let Some((&(d, t), _)) = self
            .tokens
            .iter()
            .find(|(k, v)| **v == token && **k != (dataset, task))
        {
            return Err(AugmentError::DuplicatePromptToken {
                token,
                dataset: d,
                task: t,
            });
        }
        self.tokens.insert((dataset, task), token);
        Ok(())
    }

    /// Routes `dataset` to `target`'s prompt tokens when it has none of its own.
    pub fn alias(&mut self, dataset: Dataset, target: Dataset) {
        self.aliases.insert(dataset, target);
    }

    pub fn get(&self, dataset: Dataset, task: TaskShape) -> Option<&str> {
        self.tokens
            .get(&(dataset, task))
            .or_else(|| {
                let target = self.aliases.get(&dataset)?;
                self.tokens.get(&(*target, task))
            })
            .map(String::as_str)
    }

    pub fn require(&self, dataset: Dataset, task: TaskShape) -> Result<&str, AugmentError> {
        self.get(dataset, task)
            .ok_or(AugmentError::MissingPrompt { dataset, task })
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.values().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (Dataset, TaskShape, &str)> {
        self.tokens.iter().map(|(&(d, t), v)| (d, t, v.as_str()))
    }
}

impl Default for PromptRegistry {
    fn default() -> Self {
        use Dataset::*;
        use TaskShape::*;
        let mut r = Self::empty();
        for (d, t, tok) in [
            (OkVqa, QToA, "<#OKA#>"),
            (Vcr, QToA, "<#A#>"),
            (Vcr, QaToE, "<#E#>"),
            (Vcr, QToAe, "<#AE#>"),
            (AOkVqa, QToA, "<#AOKA#>"),
            (AOkVqa, QaToE, "<#AOKE#>"),
            (AOkVqa, QToAe, "<#AOKAE#>"),
        ] {
            r.insert(d, t, tok).expect("default tokens are distinct");
        }
        r.alias(VqaX, AOkVqa);
        r.alias(Synth, AOkVqa);
        r
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectPlacement {
    #[default]
    BeforeQuestion,
    AfterQuestion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOptions {
    pub separator: String,
    pub tasks: Vec<TaskShape>,
    pub objects: ObjectPlacement,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            separator: DEFAULT_SEPARATOR.to_string(),
            tasks: TaskShape::ALL.to_vec(),
            objects: ObjectPlacement::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt_token: String,
    pub input_text: String,
    pub target_text: String,
    pub image_ref: String,
    pub source_id: String,
    pub task: TaskShape,
}

/// `label attr attr ; label attr ; ...`
pub fn object_string(instance: &VqaInstance) -> String {
    instance
        .objects
        .iter()
        .map(|o| {
            std::iter::once(o.label.as_str())
                .chain(o.attributes.iter().map(String::as_str))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join(" ; ")
}

/// Model input for `task`: prompt token, objects, question and (for
/// explanation-from-answer) the answer.
pub fn query_text(
    instance: &VqaInstance,
    task: TaskShape,
    registry: &PromptRegistry,
    placement: ObjectPlacement,
    answer: Option<&str>,
) -> Result<String, AugmentError> {
    let prompt = registry.require(instance.dataset, task)?;
    let objects = object_string(instance);
    let mut parts = vec![prompt];
    if placement == ObjectPlacement::BeforeQuestion && !objects.is_empty() {
        parts.push(&objects);
    }
    parts.push(&instance.question);
    if task == TaskShape::QaToE {
        if let Some(a) = answer {
            parts.push(a);
        }
    }
    if placement == ObjectPlacement::AfterQuestion && !objects.is_empty() {
        parts.push(&objects);
    }
    Ok(parts.join(" "))
}

pub fn join_answer_explanation(answer: &str, explanation: &str, separator: &str) -> String {
    format!("{answer} {separator} {explanation}")
}

/// Splits joint output on the first separator; both halves trimmed.
pub fn parse_joint(output: &str, separator: &str) -> Result<(String, String), AugmentError> {
    match output.split_once(separator) {
        Some((a, e)) => Ok((a.trim().to_string(), e.trim().to_string())),
        None => Err(AugmentError::NoSeparator {
            separator: separator.to_string(),
        }),
    }
}

/// Distinct gold answers in first-occurrence order; falls back to the
/// correct multiple-choice option when there are no direct answers.
pub fn answer_targets(instance: &VqaInstance) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for a in &instance.direct_answers {
        if !out.contains(&a.as_str()) {
            out.push(a);
        }
    }
    if out.is_empty() {
        out.extend(instance.correct_option());
    }
    out
}

/// The answer an explanation justifies: the correct option when present,
/// otherwise the most frequent direct answer (earliest on ties).
pub fn primary_answer(instance: &VqaInstance) -> Option<&str> {
    if let Some(opt) = instance.correct_option() {
        return Some(opt);
    }
    let mut best: Option<(&str, usize)> = None;
    for a in answer_targets(instance) {
        let n = instance.direct_answers.iter().filter(|x| *x == a).count();
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((a, n));
        }
    }
    best.map(|(a, _)| a)
}

/// Tasks that apply to `instance` (OK-VQA only trains answers).
pub fn applicable_tasks(instance: &VqaInstance) -> Vec<TaskShape> {
    let mut tasks = Vec::new();
    if !answer_targets(instance).is_empty() {
        tasks.push(TaskShape::QToA);
    }
    if instance.dataset != Dataset::OkVqa
        && !instance.explanations.is_empty()
        && primary_answer(instance).is_some()
    {
        tasks.push(TaskShape::QaToE);
        tasks.push(TaskShape::QToAe);
    }
    tasks
}

/// One example per applicable (task, answer/explanation) pairing.
///
/// Answer-only examples cover every distinct gold answer; explanation
/// examples pair each explanation with the primary answer.
pub fn build_examples(
    instance: &VqaInstance,
    registry: &PromptRegistry,
    options: &BuildOptions,
) -> Result<Vec<TrainingExample>, AugmentError> {
    let sep = options.separator.as_str();
    let collides = instance
        .direct_answers
        .iter()
        .chain(&instance.explanations)
        .map(String::as_str)
        .chain(instance.correct_option())
        .any(|s| s.contains(sep));
    if collides {
        return Err(AugmentError::SeparatorCollision {
            id: instance.id.clone(),
            separator: sep.to_string(),
        });
    }

    let mut out = Vec::new();
    for task in applicable_tasks(instance) {
        if !options.tasks.contains(&task) {
            continue;
        }
        let prompt = registry.require(instance.dataset, task)?.to_string();
        let mut push = |input_text: String, target_text: String| {
            out.push(TrainingExample {
                prompt_token: prompt.clone(),
                input_text,
                target_text,
                image_ref: instance.image_ref.clone(),
                source_id: instance.id.clone(),
                task,
            });
        };
        match task {
            TaskShape::QToA => {
                let input = query_text(instance, task, registry, options.objects, None)?;
                for a in answer_targets(instance) {
                    push(input.clone(), a.to_string());
                }
            }
            TaskShape::QaToE => {
                let answer = primary_answer(instance).expect("checked by applicable_tasks");
                let input = query_text(instance, task, registry, options.objects, Some(answer))?;
                for e in &instance.explanations {
                    push(input.clone(), e.clone());
                }
            }
            TaskShape::QToAe => {
                let answer = primary_answer(instance).expect("checked by applicable_tasks");
                let input = query_text(instance, task, registry, options.objects, None)?;
                for e in &instance.explanations {
                    push(input.clone(), join_answer_explanation(answer, e, sep));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsamplePolicy {
    /// Repeat each dataset `ceil(N_max / N_d)` times.
    #[default]
    RepeatToMax,
    /// Concatenate without balancing.
    None,
}

/// Repetition factor for a dataset of `n` examples against the largest.
pub fn upsample_factor(n: usize, n_max: usize, policy: UpsamplePolicy) -> usize {
    match policy {
        _ if n == 0 => 0,
        UpsamplePolicy::RepeatToMax => n_max.div_ceil(n),
        UpsamplePolicy::None => 1,
    }
}

/// Balances datasets by repetition, then shuffles the mix with `seed`.
pub fn upsample_mix(
    datasets: &[(String, Vec<TrainingExample>)],
    policy: UpsamplePolicy,
    seed: u64,
) -> Vec<TrainingExample> {
    let n_max = datasets.iter().map(|(_, ex)| ex.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for (_, examples) in datasets {
        for _ in 0..upsample_factor(examples.len(), n_max, policy) {
            out.extend(examples.iter().cloned());
        }
    }
    out.shuffle(&mut rng::seeded(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ObjectAnnotation;

    fn okvqa() -> VqaInstance {
        let mut i = VqaInstance::new("ok1", Dataset::OkVqa, "What is hanging on the line?");
        i.direct_answers = vec!["clothes".into(); 10];
        i
    }

    fn aokvqa() -> VqaInstance {
        let mut i = VqaInstance::new("aok1", Dataset::AOkVqa, "What animal is this?");
        i.direct_answers = vec!["rooster".into()];
        i.explanations = vec!["it has a red comb".into()];
        i
    }

    #[test]
    fn default_registry_tokens() {
        let r = PromptRegistry::default();
        use Dataset::*;
        use TaskShape::*;
        assert_eq!(r.get(OkVqa, QToA), Some("<#OKA#>"));
        assert_eq!(r.get(OkVqa, QaToE), None);
        assert_eq!(r.get(Vcr, QToA), Some("<#A#>"));
        assert_eq!(r.get(Vcr, QaToE), Some("<#E#>"));
        assert_eq!(r.get(Vcr, QToAe), Some("<#AE#>"));
        assert_eq!(r.get(AOkVqa, QToA), Some("<#AOKA#>"));
        assert_eq!(r.get(AOkVqa, QaToE), Some("<#AOKE#>"));
        assert_eq!(r.get(AOkVqa, QToAe), Some("<#AOKAE#>"));
        assert_eq!(r.get(VqaX, QToAe), Some("<#AOKAE#>"));
        assert_eq!(r.tokens().count(), 7);
    }

    #[test]
    fn registry_rejects_duplicates_and_malformed() {
        let mut r = PromptRegistry::default();
        assert!(matches!(
            r.insert(Dataset::VqaX, TaskShape::QToA, "<#OKA#>"),
            Err(AugmentError::DuplicatePromptToken { .. })
        ));
        assert!(matches!(
            r.insert(Dataset::VqaX, TaskShape::QToA, "VQXA"),
            Err(AugmentError::MalformedPromptToken(_))
        ));
        // re-registering the same pair with its own token is fine
        r.insert(Dataset::OkVqa, TaskShape::QToA, "<#OKA#>")
            .unwrap();
        r.insert(Dataset::VqaX, TaskShape::QToA, "<#VXA#>").unwrap();
        assert_eq!(r.get(Dataset::VqaX, TaskShape::QToA), Some("<#VXA#>"));
    }

    #[test]
    fn okvqa_yields_single_answer_example() {
        let ex = build_examples(
            &okvqa(),
            &PromptRegistry::default(),
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].task, TaskShape::QToA);
        assert!(ex[0].input_text.starts_with("<#OKA#>"));
        assert_eq!(ex[0].target_text, "clothes");
    }

    #[test]
    fn aokvqa_yields_three_examples() {
        let ex = build_examples(
            &aokvqa(),
            &PromptRegistry::default(),
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(ex.len(), 3);
        let joint = ex.iter().find(|e| e.task == TaskShape::QToAe).unwrap();
        assert_eq!(joint.target_text, "rooster <#SEP#> it has a red comb");
        assert!(joint.input_text.starts_with("<#AOKAE#>"));
        let expl = ex.iter().find(|e| e.task == TaskShape::QaToE).unwrap();
        assert_eq!(expl.input_text, "<#AOKE#> What animal is this? rooster");
        assert_eq!(expl.target_text, "it has a red comb");
        for e in &ex {
            assert!(e.input_text.starts_with(&e.prompt_token));
        }
    }

    #[test]
    fn separator_collision() {
        let mut v = VqaInstance::new("v1", Dataset::Vcr, "Why is Person1 smiling?");
        v.mc_options = vec!["He is happy".into(), "No".into()];
        v.mc_correct_index = Some(0);
        v.explanations = vec!["Person1 <#SEP#> laughs".into()];
        assert!(matches!(
            build_examples(&v, &PromptRegistry::default(), &BuildOptions::default()),
            Err(AugmentError::SeparatorCollision { .. })
        ));
    }

    #[test]
    fn missing_prompt() {
        let mut r = PromptRegistry::empty();
        r.insert(Dataset::AOkVqa, TaskShape::QToA, "<#AOKA#>")
            .unwrap();
        assert_eq!(
            build_examples(&aokvqa(), &r, &BuildOptions::default()),
            Err(AugmentError::MissingPrompt {
                dataset: Dataset::AOkVqa,
                task: TaskShape::QaToE
            })
        );
    }

    #[test]
    fn objects_placed_before_or_after_question() {
        let mut i = okvqa();
        i.objects = vec![
            ObjectAnnotation {
                label: "shirt".into(),
                attributes: vec!["white".into()],
            },
            ObjectAnnotation {
                label: "line".into(),
                attributes: vec![],
            },
        ];
        let r = PromptRegistry::default();
        let before = query_text(
            &i,
            TaskShape::QToA,
            &r,
            ObjectPlacement::BeforeQuestion,
            None,
        )
        .unwrap();
        assert_eq!(
            before,
            "<#OKA#> shirt white ; line What is hanging on the line?"
        );
        let after = query_text(
            &i,
            TaskShape::QToA,
            &r,
            ObjectPlacement::AfterQuestion,
            None,
        )
        .unwrap();
        assert_eq!(
            after,
            "<#OKA#> What is hanging on the line? shirt white ; line"
        );
    }

    #[test]
    fn parse_joint_cases() {
        assert_eq!(
            parse_joint("rooster <#SEP#> it has a red comb", "<#SEP#>").unwrap(),
            ("rooster".to_string(), "it has a red comb".to_string())
        );
        assert!(matches!(
            parse_joint("rooster", "<#SEP#>"),
            Err(AugmentError::NoSeparator { .. })
        ));
        // first occurrence wins
        assert_eq!(
            parse_joint("a <#SEP#> b <#SEP#> c", "<#SEP#>").unwrap().1,
            "b <#SEP#> c"
        );
    }

    #[test]
    fn task_names_parse() {
        assert_eq!("q2ae".parse::<TaskShape>().unwrap(), TaskShape::QToAe);
        assert_eq!("QA_TO_E".parse::<TaskShape>().unwrap(), TaskShape::QaToE);
        assert!("q2x".parse::<TaskShape>().is_err());
    }

    fn ex(id: &str) -> TrainingExample {
        TrainingExample {
            prompt_token: "<#A#>".into(),
            input_text: "<#A#> q".into(),
            target_text: "a".into(),
            image_ref: String::new(),
            source_id: id.into(),
            task: TaskShape::QToA,
        }
    }

    #[test]
    fn upsample_two_to_six() {
        let a: Vec<_> = (0..2).map(|i| ex(&format!("a{i}"))).collect();
        let b: Vec<_> = (0..6).map(|i| ex(&format!("b{i}"))).collect();
        let mixed = upsample_mix(
            &[("A".into(), a), ("B".into(), b)],
            UpsamplePolicy::RepeatToMax,
            11,
        );
        assert_eq!(mixed.len(), 12);
        assert_eq!(
            mixed
                .iter()
                .filter(|e| e.source_id.starts_with('a'))
                .count(),
            6
        );
    }

    #[test]
    fn upsample_single_dataset_is_permutation() {
        let a: Vec<_> = (0..9).map(|i| ex(&format!("a{i}"))).collect();
        let mixed = upsample_mix(&[("A".into(), a.clone())], UpsamplePolicy::RepeatToMax, 5);
        let mut ids: Vec<_> = mixed.iter().map(|e| e.source_id.clone()).collect();
        ids.sort();
        let mut want: Vec<_> = a.iter().map(|e| e.source_id.clone()).collect();
        want.sort();
        assert_eq!(ids, want);
        let again = upsample_mix(&[("A".into(), a)], UpsamplePolicy::RepeatToMax, 5);
        assert_eq!(mixed, again);
    }
}

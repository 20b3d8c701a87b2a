use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{ObjectPlacement, TaskShape, UpsamplePolicy, DEFAULT_SEPARATOR};
use crate::corpus::{Dataset, SplitSpec};
use crate::decode::DecodeConfig;
use crate::evalhub::{DaGate, EvilConfig, GateMode};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: Dataset,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spice: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bertscore: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: SplitSpec::default().train_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub tasks: Vec<TaskShape>,
    pub separator: String,
    pub objects: ObjectPlacement,
    pub upsample: UpsamplePolicy,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            tasks: TaskShape::ALL.to_vec(),
            separator: DEFAULT_SEPARATOR.to_string(),
            objects: ObjectPlacement::default(),
            upsample: UpsamplePolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Train an add-k n-gram model on the prepared examples.
    #[default]
    Ngram,
    /// Load a saved n-gram model file.
    NgramFile,
    /// Speak the scorer protocol with a child process or a TCP server.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub order: usize,
    pub k: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerKind::default(),
            order: 3,
            k: 0.1,
            model: None,
            command: None,
            address: None,
        }
    }
}

/// Decoding per task. The pipeline seed replaces each section's seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub q_to_a: DecodeConfig,
    pub qa_to_e: DecodeConfig,
    pub q_to_ae: DecodeConfig,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            q_to_a: DecodeConfig::beam(5, 6),
            qa_to_e: DecodeConfig::beam(5, 20),
            q_to_ae: DecodeConfig::beam(5, 24),
        }
    }
}

impl DecodeSection {
    pub fn for_task(&self, task: TaskShape) -> &DecodeConfig {
        match task {
            TaskShape::QToA => &self.q_to_a,
            TaskShape::QaToE => &self.qa_to_e,
            TaskShape::QToAe => &self.q_to_ae,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMethod {
    Ppl,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub methods: Vec<SelectMethod>,
    /// Method whose choice counts as the model's multiple-choice answer.
    pub primary: SelectMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            methods: vec![SelectMethod::Ppl],
            primary: SelectMethod::Ppl,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub gate: GateMode,
    pub da_gate: DaGate,
    /// Which generation supplies the evaluated explanation.
    pub explanation_source: TaskShape,
    pub evil: EvilConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            gate: GateMode::default(),
            da_gate: DaGate::default(),
            explanation_source: TaskShape::QaToE,
            evil: EvilConfig::default(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Declarative description of a full run. Relative paths resolve against
/// `base_dir` (the config file's directory when loaded from disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub prepare: PrepareConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.resolve(&self.output_dir).join(name)
    }

    /// Decode settings for `task` with the pipeline seed applied.
    pub fn decode_for(&self, task: TaskShape) -> DecodeConfig {
        DecodeConfig {
            seed: self.seed,
            ..self.decode.for_task(task).clone()
        }
    }

    /// Everything that can be checked before a stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        let mut seen = Vec::new();
        for d in &self.datasets {
            if seen.contains(&d.name) {
                return bad(format!("dataset {} listed twice", d.name));
            }
            seen.push(d.name);
            for p in std::iter::once(&d.path).chain(&d.spice).chain(&d.bertscore) {
                let full = self.resolve(p);
                if !full.is_file() {
                    return bad(format!("input file {} does not exist", full.display()));
                }
            }
        }
        SplitSpec::new(self.split.train_fraction, self.seed).map_err(PipelineError::Config)?;
        if self.prepare.tasks.is_empty() {
            return bad("no tasks selected".into());
        }
        if self.prepare.separator.trim().is_empty() {
            return bad("empty separator".into());
        }
        for task in TaskShape::ALL {
            self.decode_for(task)
                .validate()
                .map_err(|e| PipelineError::Config(format!("decode.{}: {e}", task.short_name())))?;
        }
        match self.scorer.kind {
            ScorerKind::Ngram => {
                if self.scorer.order == 0 || !(self.scorer.k > 0.0 && self.scorer.k.is_finite()) {
                    return bad(format!(
                        "n-gram order {} / k {} invalid",
                        self.scorer.order, self.scorer.k
                    ));
                }
            }
            ScorerKind::NgramFile => match &self.scorer.model {
                Some(m) if self.resolve(m).is_file() => {}
                Some(m) => {
                    return bad(format!(
                        "model file {} does not exist",
                        self.resolve(m).display()
                    ))
                }
                None => return bad("scorer.kind = ngram_file needs scorer.model".into()),
            },
            ScorerKind::External => {
                if self.scorer.command.is_none() == self.scorer.address.is_none() {
                    return bad("external scorer needs exactly one of command or address".into());
                }
            }
        }
        if self.select.methods.is_empty() {
            return bad("no selection method".into());
        }
        if !self.select.methods.contains(&self.select.primary) {
            return bad("select.primary must be one of select.methods".into());
        }
        if self.select.methods.contains(&SelectMethod::Embedding) {
            match &self.select.embeddings {
                Some(p) if self.resolve(p).is_file() => {}
                Some(p) => {
                    return bad(format!(
                        "embedding file {} does not exist",
                        self.resolve(p).display()
                    ))
                }
                None => return bad("embedding selection needs select.embeddings".into()),
            }
        }
        if self.evaluate.explanation_source == TaskShape::QToA {
            return bad("explanation_source must be QA_TO_E or Q_TO_AE".into());
        }
        if self.evaluate.evil.cider_divisor.is_nan() || self.evaluate.evil.cider_divisor <= 0.0 {
            return bad("cider_divisor must be positive".into());
        }
        Ok(())
    }
}

//! End-to-end run over one config: ingest, split, prepare, train or attach
//! a scorer, generate, select and evaluate.
//!
//! Every stage writes its output under `output_dir` and the next stage reads
//! that file back, so any stage can be rerun or replaced from the CLI.
//! Within a stage work is spread over a rayon pool; results are collected in
//! input order and samplers draw from per-record streams, so artifacts do
//! not depend on the job count.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    applicable_tasks, build_examples, join_answer_explanation, parse_joint, primary_answer,
    query_text, upsample_mix, BuildOptions, PromptRegistry, TaskShape, TrainingExample,
};
use crate::corpus::{load_dataset, split, Dataset, SplitSpec, VqaInstance};
use crate::decode::{generate_keyed, DecodeConfig};
use crate::evalhub::{evil_score, is_correct, EvilScore, Prediction};
use crate::jsonl;
use crate::metrics::{load_external_scores, vqa_accuracy, EvalItem};
use crate::rng::{fnv1a64, splitmix64};
use crate::scorer::{sequence_logprob, ExternalScorer, NgramScorer, NgramTrainer, TokenScorer};
use crate::select::{
    select_mc_embedding, select_mc_ppl, EmbeddingChoice, EmbeddingTable, PplResult, TIE_TOLERANCE,
};
use crate::text::model_tokens;

pub use config::{
    DatasetEntry, DecodeSection, EvaluateConfig, PipelineConfig, PrepareConfig, ScorerConfig,
    ScorerKind, SelectConfig, SelectMethod, SplitConfig,
};
pub use report::render_table;

pub const TOOL_NAME: &str = "umae";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}{}: {message}", record.as_ref().map(|r| format!(" (record {r})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        record: Option<String>,
        message: String,
    },
}

fn stage_err<'a, E: std::fmt::Display>(
    stage: &'static str,
    record: Option<&'a str>,
) -> impl FnOnce(E) -> PipelineError + 'a {
    move |e| PipelineError::Stage {
        stage,
        record: record.map(str::to_string),
        message: e.to_string(),
    }
}

/// One model input to generate from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub source_id: String,
    pub dataset: Dataset,
    pub task: TaskShape,
    pub input_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub source_id: String,
    pub dataset: Dataset,
    pub task: TaskShape,
    pub input_text: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub per_token_logprob: Vec<f64>,
    pub total_logprob: f64,
    pub config: DecodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub id: String,
    pub dataset: Dataset,
    pub correct_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<PplResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingChoice>,
    /// Why embedding selection produced no choice (e.g. all words OOV).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<String>,
}

impl ChoiceRecord {
    pub fn chosen(&self, method: SelectMethod) -> Option<usize> {
        match method {
            SelectMethod::Ppl => self.ppl.as_ref().map(|p| p.chosen_index),
            SelectMethod::Embedding => self.embedding.as_ref().map(|e| e.chosen_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl_choice: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_choice: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_answer: Option<String>,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: Dataset,
    pub n_train: usize,
    pub n_test: usize,
    pub n_train_examples: usize,
    /// `mc_accuracy` or `vqa_accuracy`.
    pub s_t_source: String,
    pub s_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_accuracy_ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_accuracy_embedding: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub da_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_answer_accuracy: Option<f64>,
    pub joint_parse_failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evil: Option<EvilScore>,
    /// Reported (x100) explanation metrics over the gated set.
    pub metrics: BTreeMap<String, f64>,
    pub gated_ids: Vec<String>,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub datasets: Vec<DatasetReport>,
    pub checks: Vec<InvariantCheck>,
    pub all_checks_passed: bool,
}

/// Output of the prepare stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub examples: Vec<TrainingExample>,
    pub queries: Vec<Query>,
    /// Examples per dataset before upsampling.
    pub counts: BTreeMap<Dataset, usize>,
}

/// Everything the invariant checks look at.
pub struct Artifacts<'a> {
    pub instances: &'a [VqaInstance],
    pub train: &'a [VqaInstance],
    pub test: &'a [VqaInstance],
    pub examples: &'a [TrainingExample],
    pub scorer: &'a dyn TokenScorer,
    pub generations: &'a [GenerationRecord],
    pub choices: &'a [ChoiceRecord],
    pub reports: &'a [DatasetReport],
}

/// Paths of the artifacts a run leaves behind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutputs {
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub all_checks_passed: bool,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(stage_err("setup", None))
}

fn write_jsonl<T: Serialize>(
    stage: &'static str,
    path: &Path,
    records: &[T],
) -> Result<(), PipelineError> {
    jsonl::write(path, records).map_err(stage_err(stage, None))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(
    stage: &'static str,
    path: &Path,
) -> Result<Vec<T>, PipelineError> {
    jsonl::read(path).map_err(stage_err(stage, None))
}

/// Loads every configured dataset and writes `instances.jsonl`.
pub fn stage_ingest(cfg: &PipelineConfig) -> Result<Vec<VqaInstance>, PipelineError> {
    let mut all = Vec::new();
    for d in &cfg.datasets {
        let inst = load_dataset(&cfg.resolve(&d.path), d.name).map_err(|e| {
            let record = match &e {
                crate::corpus::CorpusError::Validation { id, .. } => Some(id.clone()),
                _ => None,
            };
            PipelineError::Stage {
                stage: "ingest",
                record,
                message: e.to_string(),
            }
        })?;
        all.extend(inst);
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = all.iter().find(|i| !ids.insert(i.id.as_str())) {
        return Err(PipelineError::Stage {
            stage: "ingest",
            record: Some(dup.id.clone()),
            message: "duplicate id across datasets".into(),
        });
    }
    write_jsonl("ingest", &cfg.out("instances.jsonl"), &all)?;
    Ok(all)
}

/// Per-dataset seed for the split, so adding a dataset does not reshuffle
/// the others.
pub fn split_seed(seed: u64, dataset: Dataset) -> u64 {
    splitmix64(seed ^ fnv1a64(dataset.as_str()))
}

/// Splits each dataset and writes `train.jsonl` / `test.jsonl`.
pub fn stage_split(
    cfg: &PipelineConfig,
    instances: &[VqaInstance],
) -> Result<(Vec<VqaInstance>, Vec<VqaInstance>), PipelineError> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for d in &cfg.datasets {
        let part: Vec<VqaInstance> = instances
            .iter()
            .filter(|i| i.dataset == d.name)
            .cloned()
            .collect();
        let spec = SplitSpec::new(cfg.split.train_fraction, split_seed(cfg.seed, d.name))
            .map_err(stage_err("split", None))?;
        let (tr, te) = split(&part, &spec);
        train.extend(tr);
        test.extend(te);
    }
    write_jsonl("split", &cfg.out("train.jsonl"), &train)?;
    write_jsonl("split", &cfg.out("test.jsonl"), &test)?;
    Ok((train, test))
}

fn build_options(cfg: &PipelineConfig) -> BuildOptions {
    BuildOptions {
        separator: cfg.prepare.separator.clone(),
        tasks: cfg.prepare.tasks.clone(),
        objects: cfg.prepare.objects,
    }
}

/// Inference inputs for the test split, one per applicable task.
pub fn build_queries(
    test: &[VqaInstance],
    registry: &PromptRegistry,
    cfg: &PipelineConfig,
) -> Result<Vec<Query>, PipelineError> {
    let mut out = Vec::new();
    for inst in test {
        for task in applicable_tasks(inst) {
            if !cfg.prepare.tasks.contains(&task) {
                continue;
            }
            let answer = (task == TaskShape::QaToE)
                .then(|| primary_answer(inst))
                .flatten();
            let input_text = query_text(inst, task, registry, cfg.prepare.objects, answer)
                .map_err(stage_err("prepare", Some(&inst.id)))?;
            out.push(Query {
                source_id: inst.id.clone(),
                dataset: inst.dataset,
                task,
                input_text,
            });
        }
    }
    Ok(out)
}

/// Builds, upsamples and shuffles training examples (`examples.jsonl`) and
/// the test queries (`queries.jsonl`).
pub fn stage_prepare(
    cfg: &PipelineConfig,
    train: &[VqaInstance],
    test: &[VqaInstance],
) -> Result<Prepared, PipelineError> {
    let registry = PromptRegistry::default();
    let options = build_options(cfg);
    let mut per_dataset = Vec::new();
    let mut counts = BTreeMap::new();
    for d in &cfg.datasets {
        let mut ex = Vec::new();
        for inst in train.iter().filter(|i| i.dataset == d.name) {
            ex.extend(
                build_examples(inst, &registry, &options)
                    .map_err(stage_err("prepare", Some(&inst.id)))?,
            );
        }
        counts.insert(d.name, ex.len());
        per_dataset.push((d.name.to_string(), ex));
    }
    let examples = upsample_mix(&per_dataset, cfg.prepare.upsample, cfg.seed);
    let queries = build_queries(test, &registry, cfg)?;
    write_jsonl("prepare", &cfg.out("examples.jsonl"), &examples)?;
    write_jsonl("prepare", &cfg.out("queries.jsonl"), &queries)?;
    Ok(Prepared {
        examples,
        queries,
        counts,
    })
}

/// Tokens the scorer must be able to score at inference time.
fn inference_vocab(test: &[VqaInstance], queries: &[Query]) -> BTreeSet<String> {
    queries
        .iter()
        .flat_map(|q| model_tokens(&q.input_text))
        .chain(
            test.iter()
                .flat_map(|i| i.mc_options.iter().flat_map(|o| model_tokens(o))),
        )
        .collect()
}

/// Trains (or loads, or connects to) the reference scorer.
pub fn stage_scorer(
    cfg: &PipelineConfig,
    examples: &[TrainingExample],
    test: &[VqaInstance],
    queries: &[Query],
) -> Result<Box<dyn TokenScorer>, PipelineError> {
    let s = &cfg.scorer;
    match s.kind {
        ScorerKind::Ngram => {
            let registry = PromptRegistry::default();
            let model = NgramTrainer::new(s.order, s.k)
                .reserve(registry.tokens().map(str::to_string))
                .reserve([cfg.prepare.separator.clone()])
                .extra_vocab(inference_vocab(test, queries))
                .train(examples)
                .map_err(stage_err("train-ref", None))?;
            model
                .save(&cfg.out("model.json"))
                .map_err(stage_err("train-ref", None))?;
            Ok(Box::new(model))
        }
        ScorerKind::NgramFile => {
            let path = cfg.resolve(s.model.as_ref().expect("validated"));
            let model = NgramScorer::load(&path).map_err(stage_err("train-ref", None))?;
            Ok(Box::new(model))
        }
        ScorerKind::External => {
            let scorer = match (&s.command, &s.address) {
                (Some(cmd), _) => ExternalScorer::spawn(cmd),
                (None, Some(addr)) => ExternalScorer::connect_tcp(addr.as_str()),
                (None, None) => unreachable!("validated"),
            }
            .map_err(stage_err("train-ref", None))?;
            Ok(Box::new(scorer))
        }
    }
}

/// Key of a query's sampling stream.
pub fn generation_key(source_id: &str, task: TaskShape) -> String {
    format!("{source_id}/{}", task.short_name())
}

pub fn generate_one<S: TokenScorer + ?Sized>(
    scorer: &S,
    query: &Query,
    config: &DecodeConfig,
) -> Result<GenerationRecord, PipelineError> {
    let err = stage_err("generate", Some(&query.source_id));
    let ctx = match scorer.vocab().context_for(&query.input_text) {
        Ok(c) => c,
        Err(e) => return Err(err(e)),
    };
    let g = generate_keyed(
        scorer,
        &ctx,
        config,
        &generation_key(&query.source_id, query.task),
    )
    .map_err(stage_err("generate", Some(&query.source_id)))?;
    Ok(GenerationRecord {
        source_id: query.source_id.clone(),
        dataset: query.dataset,
        task: query.task,
        input_text: query.input_text.clone(),
        text: g.text,
        tokens: g.tokens,
        per_token_logprob: g.per_token_logprob,
        total_logprob: g.total_logprob,
        config: config.clone(),
    })
}

/// Decodes every query with its task's settings (`generations.jsonl`).
pub fn stage_generate(
    cfg: &PipelineConfig,
    scorer: &dyn TokenScorer,
    queries: &[Query],
) -> Result<Vec<GenerationRecord>, PipelineError> {
    let configs: HashMap<TaskShape, DecodeConfig> = TaskShape::ALL
        .iter()
        .map(|&t| (t, cfg.decode_for(t)))
        .collect();
    let out: Vec<GenerationRecord> = pool(cfg.jobs)?.install(|| {
        queries
            .par_iter()
            .map(|q| generate_one(scorer, q, &configs[&q.task]))
            .collect::<Result<_, _>>()
    })?;
    write_jsonl("generate", &cfg.out("generations.jsonl"), &out)?;
    Ok(out)
}

/// Multiple-choice mapping for one instance by every configured method.
pub fn choose(
    inst: &VqaInstance,
    scorer: &dyn TokenScorer,
    query: Option<&Query>,
    generation: Option<&str>,
    methods: &[SelectMethod],
    table: Option<&EmbeddingTable>,
) -> Result<ChoiceRecord, PipelineError> {
    let id = Some(inst.id.as_str());
    let mut rec = ChoiceRecord {
        id: inst.id.clone(),
        dataset: inst.dataset,
        correct_index: inst.mc_correct_index,
        ppl: None,
        embedding: None,
        embedding_error: None,
        generation: generation.map(str::to_string),
    };
    if methods.contains(&SelectMethod::Ppl) {
        let vocab = scorer.vocab();
        let ctx = match query {
            Some(q) => vocab
                .context_for(&q.input_text)
                .map_err(stage_err("select", id))?,
            None => vec![vocab.bos()],
        };
        let options: Vec<_> = inst
            .mc_options
            .iter()
            .map(|o| vocab.encode_text(o))
            .collect::<Result<_, _>>()
            .map_err(stage_err("select", id))?;
        rec.ppl = Some(select_mc_ppl(scorer, &ctx, &options).map_err(stage_err("select", id))?);
    }
    if methods.contains(&SelectMethod::Embedding) {
        let table = table.expect("validated: embeddings configured");
        match select_mc_embedding(generation.unwrap_or(""), &inst.mc_options, table) {
            Ok(c) => rec.embedding = Some(c),
            Err(e) => rec.embedding_error = Some(e.to_string()),
        }
    }
    Ok(rec)
}

/// Maps the answer generations onto options (`choices.jsonl`).
pub fn stage_select(
    cfg: &PipelineConfig,
    scorer: &dyn TokenScorer,
    test: &[VqaInstance],
    queries: &[Query],
    generations: &[GenerationRecord],
) -> Result<Vec<ChoiceRecord>, PipelineError> {
    let table = match &cfg.select.embeddings {
        Some(p) if cfg.select.methods.contains(&SelectMethod::Embedding) => {
            Some(EmbeddingTable::load(&cfg.resolve(p)).map_err(stage_err("select", None))?)
        }
        _ => None,
    };
    let q_by_id: HashMap<&str, &Query> = queries
        .iter()
        .filter(|q| q.task == TaskShape::QToA)
        .map(|q| (q.source_id.as_str(), q))
        .collect();
    let g_by_id: HashMap<&str, &str> = generations
        .iter()
        .filter(|g| g.task == TaskShape::QToA)
        .map(|g| (g.source_id.as_str(), g.text.as_str()))
        .collect();
    let with_options: Vec<&VqaInstance> =
        test.iter().filter(|i| !i.mc_options.is_empty()).collect();
    let out: Vec<ChoiceRecord> = pool(cfg.jobs)?.install(|| {
        with_options
            .par_iter()
            .map(|inst| {
                choose(
                    inst,
                    scorer,
                    q_by_id.get(inst.id.as_str()).copied(),
                    g_by_id.get(inst.id.as_str()).copied(),
                    &cfg.select.methods,
                    table.as_ref(),
                )
            })
            .collect::<Result<_, _>>()
    })?;
    write_jsonl("select", &cfg.out("choices.jsonl"), &out)?;
    Ok(out)
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 * 100.0 / den as f64)
}

/// Scores answers and gated explanations for each dataset.
pub fn stage_evaluate(
    cfg: &PipelineConfig,
    test: &[VqaInstance],
    generations: &[GenerationRecord],
    choices: &[ChoiceRecord],
) -> Result<Vec<DatasetReport>, PipelineError> {
    let sep = cfg.prepare.separator.as_str();
    let gen: HashMap<(&str, TaskShape), &GenerationRecord> = generations
        .iter()
        .map(|g| ((g.source_id.as_str(), g.task), g))
        .collect();
    let choice: HashMap<&str, &ChoiceRecord> = choices.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut reports = Vec::new();
    for d in &cfg.datasets {
        let insts: Vec<&VqaInstance> = test.iter().filter(|i| i.dataset == d.name).collect();
        let mut records = Vec::new();
        let (mut mc_n, mut mc_ppl, mut mc_emb) = (0usize, 0usize, 0usize);
        let (mut da_n, mut da_sum) = (0usize, 0.0);
        let (mut joint_n, mut joint_ok, mut joint_fail) = (0usize, 0usize, 0usize);
        let mut items = Vec::new();
        let mut gated = Vec::new();
        for inst in &insts {
            let id = inst.id.as_str();
            let answer = gen.get(&(id, TaskShape::QToA)).map(|g| g.text.clone());
            let c = choice.get(id);
            let ppl_choice = c.and_then(|c| c.chosen(SelectMethod::Ppl));
            let emb_choice = c.and_then(|c| c.chosen(SelectMethod::Embedding));
            if inst.mc_correct_index.is_some() {
                mc_n += 1;
                mc_ppl += usize::from(ppl_choice.is_some() && ppl_choice == inst.mc_correct_index);
                mc_emb += usize::from(emb_choice.is_some() && emb_choice == inst.mc_correct_index);
            }
            let answer_accuracy = match (&answer, inst.direct_answers.is_empty()) {
                (Some(a), false) => {
                    let acc = vqa_accuracy(a, &inst.direct_answers)
                        .map_err(stage_err("evaluate", Some(id)))?;
                    da_n += 1;
                    da_sum += acc;
                    Some(acc)
                }
                _ => None,
            };
            let joint = gen
                .get(&(id, TaskShape::QToAe))
                .map(|g| parse_joint(&g.text, sep));
            let joint_answer = match &joint {
                Some(Ok((a, _))) => Some(a.clone()),
                Some(Err(_)) => {
                    joint_fail += 1;
                    None
                }
                None => None,
            };
            if joint.is_some() {
                joint_n += 1;
                if let Some(a) = &joint_answer {
                    let pred = Prediction {
                        id: inst.id.clone(),
                        mc_index: None,
                        answer: Some(a.clone()),
                    };
                    joint_ok += usize::from(
                        is_correct(
                            inst,
                            &pred,
                            crate::evalhub::GateMode::Da,
                            cfg.evaluate.da_gate,
                        )
                        .map_err(stage_err("evaluate", Some(id)))?,
                    );
                }
            }
            let pred = Prediction {
                id: inst.id.clone(),
                mc_index: c.and_then(|c| c.chosen(cfg.select.primary)),
                answer: answer.clone(),
            };
            let correct = if pred.mc_index.is_none() && pred.answer.is_none() {
                false
            } else {
                is_correct(inst, &pred, cfg.evaluate.gate, cfg.evaluate.da_gate)
                    .map_err(stage_err("evaluate", Some(id)))?
            };
            let explanation = match cfg.evaluate.explanation_source {
                TaskShape::QToAe => match &joint {
                    Some(Ok((_, e))) => Some(e.clone()),
                    _ => None,
                },
                task => gen.get(&(id, task)).map(|g| g.text.clone()),
            };
            if correct && !inst.explanations.is_empty() {
                if let Some(e) = &explanation {
                    gated.push(inst.id.clone());
                    items.push(EvalItem {
                        id: inst.id.clone(),
                        candidate: e.clone(),
                        references: inst.explanations.clone(),
                    });
                }
            }
            records.push(InstanceRecord {
                id: inst.id.clone(),
                answer,
                answer_accuracy,
                correct_index: inst.mc_correct_index,
                ppl_choice,
                embedding_choice: emb_choice,
                joint_answer,
                correct,
                explanation,
                references: inst.explanations.clone(),
            });
        }
        let has_mc = mc_n > 0;
        let mc_primary = match cfg.select.primary {
            SelectMethod::Ppl => mc_ppl,
            SelectMethod::Embedding => mc_emb,
        };
        let (s_t_source, s_t) = if has_mc {
            ("mc_accuracy", pct(mc_primary, mc_n).unwrap_or(0.0))
        } else {
            (
                "vqa_accuracy",
                if da_n > 0 {
                    da_sum / da_n as f64 * 100.0
                } else {
                    0.0
                },
            )
        };
        let has_explanations = insts.iter().any(|i| !i.explanations.is_empty());
        let (evil, metrics) = if has_explanations {
            let expected: BTreeSet<String> = insts.iter().map(|i| i.id.clone()).collect();
            let load = |p: &Option<PathBuf>, name: &str| {
                p.as_ref()
                    .map(|p| load_external_scores(&cfg.resolve(p), name, &expected))
                    .transpose()
                    .map_err(stage_err("evaluate", None))
            };
            let spice = load(&d.spice, "SPICE")?;
            let bert = load(&d.bertscore, "BERTScore")?;
            let (score, values) = evil_score(
                s_t,
                &items,
                spice.as_ref(),
                bert.as_ref(),
                &cfg.evaluate.evil,
            )
            .map_err(stage_err("evaluate", None))?;
            let mut metrics: BTreeMap<String, f64> = values
                .iter()
                .map(|m| (m.name.clone(), m.reported()))
                .collect();
            metrics.extend(score.member_values.iter().map(|(k, v)| (k.clone(), *v)));
            if let Some(b) = score.bertscore {
                metrics.insert("BERTScore".into(), b);
            }
            (Some(score), metrics)
        } else {
            (None, BTreeMap::new())
        };
        reports.push(DatasetReport {
            dataset: d.name,
            n_train: 0,
            n_test: insts.len(),
            n_train_examples: 0,
            s_t_source: s_t_source.into(),
            s_t,
            mc_accuracy_ppl: cfg
                .select
                .methods
                .contains(&SelectMethod::Ppl)
                .then(|| pct(mc_ppl, mc_n))
                .flatten(),
            mc_accuracy_embedding: cfg
                .select
                .methods
                .contains(&SelectMethod::Embedding)
                .then(|| pct(mc_emb, mc_n))
                .flatten(),
            da_accuracy: (da_n > 0).then(|| da_sum / da_n as f64 * 100.0),
            joint_answer_accuracy: pct(joint_ok, joint_n),
            joint_parse_failures: joint_fail,
            evil,
            metrics,
            gated_ids: gated,
            instances: records,
        });
    }
    Ok(reports)
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Structural checks recorded in the report.
pub fn invariant_checks(cfg: &PipelineConfig, a: &Artifacts<'_>) -> Vec<InvariantCheck> {
    let Artifacts {
        instances,
        train,
        test,
        examples,
        scorer,
        generations,
        choices,
        reports,
    } = *a;
    let mut out = Vec::new();

    let tr: BTreeSet<&str> = train.iter().map(|i| i.id.as_str()).collect();
    let te: BTreeSet<&str> = test.iter().map(|i| i.id.as_str()).collect();
    let all: BTreeSet<&str> = instances.iter().map(|i| i.id.as_str()).collect();
    let partition = tr.is_disjoint(&te) && tr.union(&te).copied().collect::<BTreeSet<_>>() == all;
    out.push(check(
        "split_partition",
        partition,
        format!("{} train + {} test of {}", tr.len(), te.len(), all.len()),
    ));

    let registry = PromptRegistry::default();
    let tokens: BTreeSet<&str> = registry.tokens().collect();
    let prompts_ok = examples.iter().all(|e| {
        tokens.contains(e.prompt_token.as_str()) && e.input_text.starts_with(&e.prompt_token)
    });
    out.push(check(
        "prompt_tokens",
        prompts_ok,
        format!("{} examples", examples.len()),
    ));

    let sep = cfg.prepare.separator.as_str();
    let joint_ok = instances.iter().all(|i| {
        let Some(a) = primary_answer(i) else {
            return true;
        };
        i.explanations.iter().all(|e| {
            parse_joint(&join_answer_explanation(a, e, sep), sep)
                .is_ok_and(|(pa, pe)| pa == a.trim() && pe == e.trim())
        })
    });
    out.push(check(
        "joint_round_trip",
        joint_ok,
        "gold answer/explanation pairs",
    ));

    let mut worst = 0.0f64;
    let mut rescored = true;
    for g in generations {
        worst = worst.max((g.per_token_logprob.iter().sum::<f64>() - g.total_logprob).abs());
        let vocab = scorer.vocab();
        let ok = vocab.context_for(&g.input_text).ok().and_then(|ctx| {
            let ids = vocab.encode(&g.tokens).ok()?;
            sequence_logprob(scorer, &ctx, &ids).ok()
        });
        rescored &= ok.is_some_and(|s| {
            s.per_token.len() == g.per_token_logprob.len()
                && s.per_token
                    .iter()
                    .zip(&g.per_token_logprob)
                    .all(|(a, b)| (a - b).abs() <= 1e-9)
        });
    }
    out.push(check(
        "generation_logprobs",
        worst <= 1e-9 && rescored,
        format!(
            "{} generations, max |sum - total| = {worst:e}",
            generations.len()
        ),
    ));

    let argmin_ok = choices.iter().all(|c| {
        c.ppl.as_ref().is_none_or(|p| {
            let best = p.per_option[p.chosen_index].perplexity;
            let tie = TIE_TOLERANCE * best;
            p.per_option.iter().enumerate().all(|(i, o)| {
                o.perplexity >= best - tie && (i >= p.chosen_index || o.perplexity > best + tie)
            })
        })
    });
    out.push(check(
        "ppl_argmin",
        argmin_ok,
        format!("{} choice records", choices.len()),
    ));

    out.extend(report_checks(reports));
    out
}

/// Checks that only need the per-dataset reports.
pub fn report_checks(reports: &[DatasetReport]) -> Vec<InvariantCheck> {
    let mut out = Vec::new();
    for r in reports {
        let name = r.dataset.as_str().to_ascii_lowercase();
        let test_ids: BTreeSet<&str> = r.instances.iter().map(|i| i.id.as_str()).collect();
        let correct: BTreeSet<&str> = r
            .instances
            .iter()
            .filter(|i| i.correct)
            .map(|i| i.id.as_str())
            .collect();
        let gated_ok = r
            .gated_ids
            .iter()
            .all(|id| test_ids.contains(id.as_str()) && correct.contains(id.as_str()));
        out.push(check(
            &format!("{name}_gated_subset"),
            gated_ok,
            format!("{} gated", r.gated_ids.len()),
        ));
        let s_t_ok = (0.0..=100.0).contains(&r.s_t);
        out.push(check(
            &format!("{name}_s_t_range"),
            s_t_ok,
            format!("S_T = {:.4}", r.s_t),
        ));
        if let Some(e) = &r.evil {
            let product = match e.s_e {
                Some(s_e) => {
                    (e.s_o - e.s_t * s_e / 100.0).abs() <= 1e-9 && e.s_o <= e.s_t.min(s_e) + 1e-9
                }
                None => e.s_o == 0.0 && e.empty_gate,
            };
            out.push(check(
                &format!("{name}_s_o_product"),
                product,
                format!("S_O = {:.4}", e.s_o),
            ));
            let members: Vec<f64> = e.member_values.values().copied().collect();
            let hm_ok = match e.ngram_score {
                Some(n) if !members.is_empty() => {
                    let lo = members.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = members.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo == 0.0 && n == 0.0) || (n >= lo - 1e-9 && n <= hi + 1e-9)
                }
                _ => true,
            };
            out.push(check(
                &format!("{name}_ngram_hm_bounds"),
                hm_ok,
                format!("members {:?}", e.members),
            ));
            let ranges_ok = r.metrics.iter().all(|(k, v)| {
                let hi = if k == "CIDEr" { 1000.0 } else { 100.0 };
                *v >= 0.0 && *v <= hi + 1e-9
            });
            out.push(check(
                &format!("{name}_metric_ranges"),
                ranges_ok,
                format!("{} metrics", r.metrics.len()),
            ));
        }
    }
    out
}

/// Runs every stage and writes `report.json` and `report.txt`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutputs, PipelineError> {
    cfg.validate()?;
    let out_dir = cfg.resolve(&cfg.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(stage_err("setup", None))?;

    stage_ingest(cfg)?;
    let instances: Vec<VqaInstance> = read_jsonl("split", &cfg.out("instances.jsonl"))?;
    stage_split(cfg, &instances)?;
    let train: Vec<VqaInstance> = read_jsonl("prepare", &cfg.out("train.jsonl"))?;
    let test: Vec<VqaInstance> = read_jsonl("prepare", &cfg.out("test.jsonl"))?;
    let example_counts = stage_prepare(cfg, &train, &test)?.counts;
    let examples: Vec<TrainingExample> = read_jsonl("train-ref", &cfg.out("examples.jsonl"))?;
    let queries: Vec<Query> = read_jsonl("train-ref", &cfg.out("queries.jsonl"))?;
    let scorer = stage_scorer(cfg, &examples, &test, &queries)?;
    stage_generate(cfg, scorer.as_ref(), &queries)?;
    let generations: Vec<GenerationRecord> = read_jsonl("select", &cfg.out("generations.jsonl"))?;
    stage_select(cfg, scorer.as_ref(), &test, &queries, &generations)?;
    let choices: Vec<ChoiceRecord> = read_jsonl("evaluate", &cfg.out("choices.jsonl"))?;
    let mut reports = stage_evaluate(cfg, &test, &generations, &choices)?;
    for r in &mut reports {
        r.n_train = train.iter().filter(|i| i.dataset == r.dataset).count();
        r.n_train_examples = example_counts.get(&r.dataset).copied().unwrap_or(0);
    }
    let checks = invariant_checks(
        cfg,
        &Artifacts {
            instances: &instances,
            train: &train,
            test: &test,
            examples: &examples,
            scorer: scorer.as_ref(),
            generations: &generations,
            choices: &choices,
            reports: &reports,
        },
    );
    let all_checks_passed = checks.iter().all(|c| c.passed);
    let report = Report {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: cfg.clone(),
        datasets: reports,
        checks,
        all_checks_passed,
    };
    let report_json = cfg.out("report.json");
    let report_txt = cfg.out("report.txt");
    let body = serde_json::to_string_pretty(&report).map_err(stage_err("report", None))?;
    std::fs::write(&report_json, body + "\n").map_err(stage_err("report", None))?;
    std::fs::write(&report_txt, render_table(&report)).map_err(stage_err("report", None))?;
    Ok(RunOutputs {
        report_json,
        report_txt,
        all_checks_passed,
    })
}

//! Readers that accept the JSONL shapes produced by the different stages.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

use umae::augment::{PromptRegistry, TaskShape, TrainingExample};
use umae::jsonl;
use umae::pipeline::Query;
use umae::scorer::{ExternalScorer, NgramScorer};
use umae::{TokenScorer, VqaInstance};

pub fn read_instances(paths: &[PathBuf]) -> Result<Vec<VqaInstance>> {
    let mut out = Vec::new();
    for p in paths {
        let recs: Vec<VqaInstance> =
            jsonl::read(p).with_context(|| format!("reading {}", p.display()))?;
        out.extend(recs);
    }
    Ok(out)
}

fn lines(path: &Path) -> Result<Vec<(usize, Value)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

/// Queries from a query file or a training-example file. Examples map back
/// to their dataset through the prompt token; duplicate inputs collapse.
pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    let registry = PromptRegistry::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, v) in lines(path)? {
        let q: Query = if v.get("dataset").is_some() {
            serde_json::from_value(v).with_context(|| format!("{}:{line}", path.display()))?
        } else {
            let ex: TrainingExample =
                serde_json::from_value(v).with_context(|| format!("{}:{line}", path.display()))?;
            let dataset = registry
                .entries()
                .find(|(_, _, tok)| *tok == ex.prompt_token)
                .map(|(d, _, _)| d)
                .ok_or_else(|| {
                    anyhow!(
                        "{}:{line}: unknown prompt token {}",
                        path.display(),
                        ex.prompt_token
                    )
                })?;
            Query {
                source_id: ex.source_id,
                dataset,
                task: ex.task,
                input_text: ex.input_text,
            }
        };
        if seen.insert((q.source_id.clone(), q.task, q.input_text.clone())) {
            out.push(q);
        }
    }
    Ok(out)
}

fn str_field<'a>(v: &'a Value, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| v.get(*k).and_then(Value::as_str))
}

/// `(id, text)` candidates. Records with a `task` field are kept only when
/// it matches `task`.
pub fn read_candidates(path: &Path, task: TaskShape) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (line, v) in lines(path)? {
        if let Some(t) = str_field(&v, &["task"]) {
            if t.parse::<TaskShape>().map_err(|e| anyhow!(e))? != task {
                continue;
            }
        }
        let id = str_field(&v, &["id", "source_id"])
            .ok_or_else(|| anyhow!("{}:{line}: no id", path.display()))?;
        let text = str_field(&v, &["text", "candidate"])
            .ok_or_else(|| anyhow!("{}:{line}: no text", path.display()))?;
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

/// id -> references, from canonical instances (`explanations`) or
/// `{"id", "references"}` records.
pub fn read_references(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out = BTreeMap::new();
    for (line, v) in lines(path)? {
        let id =
            str_field(&v, &["id"]).ok_or_else(|| anyhow!("{}:{line}: no id", path.display()))?;
        let refs = v
            .get("references")
            .or_else(|| v.get("explanations"))
            .and_then(Value::as_array)
            .ok_or_else(|| anyhow!("{}:{line}: no references", path.display()))?;
        let refs: Vec<String> = refs
            .iter()
            .filter_map(|r| r.as_str().map(str::to_string))
            .collect();
        out.insert(id.to_string(), refs);
    }
    Ok(out)
}

/// `name=path` pairs for external score files.
pub fn external_args(args: &[String]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for a in args {
        let (name, path) = a
            .split_once('=')
            .ok_or_else(|| anyhow!("--external expects name=path, got {a:?}"))?;
        let name = match name.to_ascii_lowercase().as_str() {
            "spice" => "SPICE".to_string(),
            "bertscore" => "BERTScore".to_string(),
            other => bail!("unknown external metric {other:?} (spice or bertscore)"),
        };
        out.insert(name, PathBuf::from(path));
    }
    Ok(out)
}

pub fn open_model(spec: &str) -> Result<Box<dyn TokenScorer>> {
    if let Some(cmd) = spec.strip_prefix("extern:") {
        return Ok(Box::new(
            ExternalScorer::spawn(cmd).context("starting external scorer")?,
        ));
    }
    if let Some(addr) = spec.strip_prefix("tcp:") {
        return Ok(Box::new(
            ExternalScorer::connect_tcp(addr).context("connecting to scorer")?,
        ));
    }
    Ok(Box::new(
        NgramScorer::load(Path::new(spec)).with_context(|| format!("loading model {spec}"))?,
    ))
}

pub fn ids_of<'a>(ids: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    ids.into_iter().map(str::to_string).collect()
}

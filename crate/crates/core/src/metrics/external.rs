//! Per-instance scores computed out of process (SPICE, BERTScore, ...).
//!
//! Accepted layouts: CSV `id,value` (an `id,value` header line is optional)
//! or JSONL `{"id": ..., "value": ...}`. Values must lie in `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub metric: String,
    pub values: BTreeMap<String, f64>,
}

impl ExternalScores {
    /// Mean over `ids`, `None` when `ids` is empty.
    pub fn mean_over<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<Option<f64>, MetricError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for id in ids {
            sum += self
                .values
                .get(id)
                .ok_or_else(|| MetricError::MissingId(id.to_string()))?;
            n += 1;
        }
        Ok((n > 0).then(|| sum / n as f64))
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: serde_json::Value,
    value: f64,
}

fn parse_records(text: &str, origin: &str) -> Result<Vec<(String, f64)>, MetricError> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    let parse_err = |line: usize, message: String| MetricError::Parse {
        origin: origin.to_string(),
        line,
        message,
    };
    if first.is_some_and(|l| l.starts_with('{')) {
        let mut out = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonRecord =
                serde_json::from_str(line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
            let id = match rec.id {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            out.push((id, rec.value));
        }
        return Ok(out);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(idx + 1, e.to_string()))?;
        if rec.len() != 2 {
            return Err(parse_err(
                idx + 1,
                format!("expected 2 fields, got {}", rec.len()),
            ));
        }
        if idx == 0 && &rec[0] == "id" && &rec[1] == "value" {
            continue;
        }
        let value = rec[1]
            .parse::<f64>()
            .map_err(|e| parse_err(idx + 1, format!("value {:?}: {e}", &rec[1])))?;
        out.push((rec[0].to_string(), value));
    }
    Ok(out)
}

/// Parses score text and checks that every expected id is covered and in
/// range. Ids outside `expected` are dropped.
pub fn parse_external_scores(
    text: &str,
    metric: &str,
    expected: &BTreeSet<String>,
    origin: &str,
) -> Result<ExternalScores, MetricError> {
    let mut values = BTreeMap::new();
    for (id, value) in parse_records(text, origin)? {
        if !expected.contains(&id) {
            continue;
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricError::RangeError { id, value });
        }
        values.insert(id, value);
    }
    if let Some(missing) = expected.iter().find(|id| !values.contains_key(*id)) {
        return Err(MetricError::MissingId(missing.clone()));
    }
    Ok(ExternalScores {
        metric: metric.to_string(),
        values,
    })
}

pub fn load_external_scores(
    path: &Path,
    metric: &str,
    expected: &BTreeSet<String>,
) -> Result<ExternalScores, MetricError> {
    let text = std::fs::read_to_string(path)?;
    parse_external_scores(&text, metric, expected, &path.display().to_string())
}

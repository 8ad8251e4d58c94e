//! Dataset loading and deterministic train / annotation splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

use crate::config::{DatasetFormat, RunConfig};
use crate::model::{content_id, largest_remainder, DatasetSplits, LabeledExample, SplitError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fields {
    pub text: String,
    pub label: String,
    pub id: String,
}

impl Default for Fields {
    fn default() -> Self {
        Self {
            text: "text".into(),
            label: "label".into(),
            id: "id".into(),
        }
    }
}

/// One input row; label and id are optional until splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub line: usize,
    pub id: Option<String>,
    pub text: String,
    pub label: Option<String>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("class `{class}` has {have} examples, fewer than the train quota {need}")]
    ClassQuotaUnmet { class: String, have: usize, need: usize },
    #[error("id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("dataset has {0} classes; at least 2 are required")]
    TooFewClasses(usize),
    #[error(transparent)]
    Split(#[from] SplitError),
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

pub fn read_jsonl(text: &str, fields: &Fields) -> Result<Vec<Record>, IngestError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| IngestError::MalformedRecord { line, reason };
        let v: Value = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| malformed("not a JSON object".into()))?;
        let text = obj
            .get(&fields.text)
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(format!("missing string field `{}`", fields.text)))?;
        let label = match obj.get(&fields.label) {
            None | Some(Value::Null) => None,
            Some(l) => Some(scalar_string(l).ok_or_else(|| malformed(format!("field `{}` is not a scalar", fields.label)))?),
        };
        let id = match obj.get(&fields.id) {
            None | Some(Value::Null) => None,
            Some(i) => Some(scalar_string(i).ok_or_else(|| malformed(format!("field `{}` is not a scalar", fields.id)))?),
        };
        out.push(Record {
            line,
            id,
            text: text.to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn read_csv(text: &str, fields: &Fields) -> Result<Vec<Record>, IngestError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRecord { line: 1, reason: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let text_col = col(&fields.text).ok_or_else(|| IngestError::MalformedRecord {
        line: 1,
        reason: format!("no `{}` column", fields.text),
    })?;
    let label_col = col(&fields.label);
    let id_col = col(&fields.id);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::MalformedRecord {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()).map(String::from);
        out.push(Record {
            line,
            id: cell(id_col),
            text: cell(Some(text_col)).ok_or(IngestError::MalformedRecord {
                line,
                reason: format!("empty `{}`", fields.text),
            })?,
            label: cell(label_col),
        });
    }
    Ok(out)
}

pub fn read_records(path: &Path, format: DatasetFormat, fields: &Fields) -> Result<Vec<Record>, IngestError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        DatasetFormat::Jsonl => read_jsonl(&text, fields),
        DatasetFormat::Csv => read_csv(&text, fields),
    }
}

/// Labelled examples with ids: provided ids must be unique; missing ids are
/// content hashes, suffixed on collision.
pub fn to_examples(records: Vec<Record>) -> Result<Vec<LabeledExample>, IngestError> {
    let mut seen = HashSet::new();
    let mut generated: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let label = r.label.ok_or_else(|| IngestError::MalformedRecord {
            line: r.line,
            reason: "missing label".into(),
        })?;
        let id = match r.id {
            Some(id) => id,
            None => {
                let base = content_id(&r.text, &label);
                let n = generated.entry(base.clone()).or_insert(0);
                *n += 1;
                if *n == 1 {
                    base
                } else {
                    format!("{base}-{n}")
                }
            }
        };
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId(id));
        }
        out.push(LabeledExample::new(id, r.text, label));
    }
    Ok(out)
}

/// Per-class train quota, then an annotation split stratified by the
/// remaining class distribution. Deterministic in `seed` and independent of
/// input row order.
pub fn split_examples(
    examples: Vec<LabeledExample>,
    train_per_class: usize,
    annotation_size: usize,
    seed: u64,
) -> Result<DatasetSplits, IngestError> {
    let mut by_class: BTreeMap<String, Vec<LabeledExample>> = BTreeMap::new();
    for ex in examples {
        by_class.entry(ex.label.clone()).or_default().push(ex);
    }
    if by_class.len() < 2 {
        return Err(IngestError::TooFewClasses(by_class.len()));
    }
    for (class, members) in &by_class {
        if members.len() < train_per_class {
            return Err(IngestError::ClassQuotaUnmet {
                class: class.clone(),
                have: members.len(),
                need: train_per_class,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut rest: Vec<Vec<LabeledExample>> = Vec::new();
    for members in by_class.values_mut() {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        let tail = members.split_off(train_per_class);
        train.append(members);
        rest.push(tail);
    }
    let weights: Vec<usize> = rest.iter().map(Vec::len).collect();
    let quotas = largest_remainder(&weights, annotation_size);
    let annotation = rest
        .into_iter()
        .zip(quotas)
        .flat_map(|(members, q)| members.into_iter().take(q))
        .collect();
    Ok(DatasetSplits::new(train, annotation, by_class.into_keys().collect())?)
}

pub fn ingest(config: &RunConfig) -> Result<DatasetSplits, IngestError> {
    let fields = Fields {
        text: config.text_field.clone(),
        label: config.label_field.clone(),
        id: config.id_field.clone(),
    };
    let records = read_records(&config.dataset_path, config.dataset_format, &fields)?;
    split_examples(to_examples(records)?, config.train_per_class, config.annotation_size, config.seed)
}

//! Domain types: datasets, feature schemas, prompt candidates and realized
//! feature values, plus schema validation and example-set sampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Upper bound on the number of features in one schema.
pub const MAX_FEATURES: usize = 32;
/// Upper bound on the number of categories of a categorical feature.
pub const MAX_CATEGORIES: usize = 32;
/// Upper bound on feature name length.
pub const MAX_NAME_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Boolean,
    Integer,
    Real,
    Categorical,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Boolean => "boolean",
            ValueKind::Integer => "integer",
            ValueKind::Real => "real",
            ValueKind::Categorical => "categorical",
        }
    }

    /// Accepts the canonical names plus the Python-style spellings LMs tend to use.
    pub fn parse_loose(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "boolean" | "bool" => Some(ValueKind::Boolean),
            "integer" | "int" => Some(ValueKind::Integer),
            "real" | "float" | "number" | "double" => Some(ValueKind::Real),
            "categorical" | "literal" | "enum" | "category" => Some(ValueKind::Categorical),
            _ => None,
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Declared value type of a feature. Categories are present only for
/// categorical features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureValueType {
    Boolean,
    Integer,
    Real,
    Categorical(Vec<String>),
}

impl FeatureValueType {
    pub fn kind(&self) -> ValueKind {
        match self {
            FeatureValueType::Boolean => ValueKind::Boolean,
            FeatureValueType::Integer => ValueKind::Integer,
            FeatureValueType::Real => ValueKind::Real,
            FeatureValueType::Categorical(_) => ValueKind::Categorical,
        }
    }

    pub fn categories(&self) -> &[String] {
        match self {
            FeatureValueType::Categorical(c) => c,
            _ => &[],
        }
    }
}

/// A corpus-level feature definition as proposed by the feature proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDefinition {
    pub name: String,
    pub value_type: FeatureValueType,
    pub description: String,
    pub extraction_prompt: String,
}

/// Unvalidated, document-shaped feature definition. This is the wire shape
/// used both in LM output and in the canonical serialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFeature {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub extraction_prompt: String,
    #[serde(default)]
    pub name: String,
    #[serde(rename = "type", default)]
    pub value_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFeatureSet {
    #[serde(default)]
    pub features: Vec<RawFeature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("feature list is empty")]
    EmptyFeatureList,
    #[error("feature list has {0} entries, more than the cap of {MAX_FEATURES}")]
    TooManyFeatures(usize),
    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),
    #[error("`{0}` is not a snake_case identifier of at most {MAX_NAME_LEN} chars")]
    BadIdentifier(String),
    #[error("feature `{name}` has an unknown type `{value_type}`")]
    UnknownType { name: String, value_type: String },
    #[error("feature `{name}`: {detail}")]
    BadCategoricalArity { name: String, detail: String },
    #[error("feature `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("feature `{0}` has an empty extraction prompt")]
    EmptyExtractionPrompt(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid feature set: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationErrors(pub Vec<Violation>);

pub fn is_snake_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    name.len() <= MAX_NAME_LEN
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Ordered, validated list of feature definitions with distinct names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    features: Vec<FeatureDefinition>,
}

impl FeatureSet {
    pub fn new(features: Vec<FeatureDefinition>) -> Result<Self, ValidationErrors> {
        validate_feature_set(&RawFeatureSet {
            features: features.iter().map(FeatureDefinition::to_raw).collect(),
        })
    }

    pub fn features(&self) -> &[FeatureDefinition] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&FeatureDefinition> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn to_raw(&self) -> RawFeatureSet {
        RawFeatureSet {
            features: self.features.iter().map(FeatureDefinition::to_raw).collect(),
        }
    }

    /// Returns a copy without the named feature, or `None` if that would
    /// leave the set empty or the name is unknown.
    pub fn without(&self, name: &str) -> Option<FeatureSet> {
        let pos = self.position(name)?;
        if self.features.len() == 1 {
            return None;
        }
        let mut features = self.features.clone();
        features.remove(pos);
        Some(FeatureSet { features })
    }
}

impl FeatureDefinition {
    pub fn to_raw(&self) -> RawFeature {
        RawFeature {
            categories: self.value_type.categories().to_vec(),
            description: self.description.clone(),
            extraction_prompt: self.extraction_prompt.clone(),
            name: self.name.clone(),
            value_type: self.value_type.kind().as_str().to_string(),
        }
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_raw().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawFeatureSet::deserialize(d)?;
        validate_feature_set(&raw).map_err(serde::de::Error::custom)
    }
}

/// Validates a document-shaped feature set, returning every violation found.
pub fn validate_feature_set(raw: &RawFeatureSet) -> Result<FeatureSet, ValidationErrors> {
    let mut errors = Vec::new();
    if raw.features.is_empty() {
        errors.push(Violation::EmptyFeatureList);
    }
    if raw.features.len() > MAX_FEATURES {
        errors.push(Violation::TooManyFeatures(raw.features.len()));
    }

    let mut seen = HashSet::new();
    let mut reported_dup = HashSet::new();
    let mut features = Vec::with_capacity(raw.features.len());
    for rf in &raw.features {
        let name = rf.name.trim().to_string();
        if !is_snake_identifier(&name) {
            errors.push(Violation::BadIdentifier(name.clone()));
        }
        if !seen.insert(name.clone()) && reported_dup.insert(name.clone()) {
            errors.push(Violation::DuplicateName(name.clone()));
        }
        if rf.description.trim().is_empty() {
            errors.push(Violation::EmptyDescription(name.clone()));
        }
        if rf.extraction_prompt.trim().is_empty() {
            errors.push(Violation::EmptyExtractionPrompt(name.clone()));
        }
        let value_type = match ValueKind::parse_loose(&rf.value_type) {
            None => {
                errors.push(Violation::UnknownType {
                    name: name.clone(),
                    value_type: rf.value_type.clone(),
                });
                continue;
            }
            Some(ValueKind::Categorical) => match check_categories(&name, &rf.categories) {
                Ok(c) => FeatureValueType::Categorical(c),
                Err(v) => {
                    errors.push(v);
                    continue;
                }
            },
            Some(kind) => {
                if !rf.categories.is_empty() {
                    errors.push(Violation::BadCategoricalArity {
                        name: name.clone(),
                        detail: format!("{kind} feature must not declare categories"),
                    });
                    continue;
                }
                match kind {
                    ValueKind::Boolean => FeatureValueType::Boolean,
                    ValueKind::Integer => FeatureValueType::Integer,
                    _ => FeatureValueType::Real,
                }
            }
        };
        features.push(FeatureDefinition {
            name,
            value_type,
            description: rf.description.trim().to_string(),
            extraction_prompt: rf.extraction_prompt.trim().to_string(),
        });
    }

    if errors.is_empty() {
        Ok(FeatureSet { features })
    } else {
        Err(ValidationErrors(errors))
    }
}

fn check_categories(name: &str, categories: &[String]) -> Result<Vec<String>, Violation> {
    let arity = |detail: String| Violation::BadCategoricalArity {
        name: name.to_string(),
        detail,
    };
    let cats: Vec<String> = categories.iter().map(|c| c.trim().to_string()).collect();
    if cats.len() < 2 {
        return Err(arity(format!("needs at least 2 categories, got {}", cats.len())));
    }
    if cats.len() > MAX_CATEGORIES {
        return Err(arity(format!("at most {MAX_CATEGORIES} categories allowed, got {}", cats.len())));
    }
    if cats.iter().any(|c| c.is_empty()) {
        return Err(arity("empty category".to_string()));
    }
    let distinct: HashSet<&String> = cats.iter().collect();
    if distinct.len() != cats.len() {
        return Err(arity("categories are not distinct".to_string()));
    }
    Ok(cats)
}

/// Canonical, byte-stable text form of a feature schema. Keys are sorted and
/// the field order is fixed; the same document is shown to the extractor and
/// measured for schema length.
pub fn serialize_feature_schema(fs: &FeatureSet) -> String {
    serde_json::to_string_pretty(&fs.to_raw()).expect("feature schema serializes")
}

pub fn parse_feature_schema(text: &str) -> Result<FeatureSet, SchemaParseError> {
    let raw: RawFeatureSet = serde_json::from_str(text)?;
    Ok(validate_feature_set(&raw)?)
}

#[derive(Debug, Error)]
pub enum SchemaParseError {
    #[error("malformed schema document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationErrors),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Content-derived id for records that arrive without one.
pub fn content_id(text: &str, label: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update([0u8]);
    h.update(label.as_bytes());
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class names are not distinct")]
    DuplicateClass,
    #[error("example `{id}` has label `{label}` outside the class vocabulary")]
    UnknownLabel { id: String, label: String },
    #[error("example `{0}` has empty text")]
    EmptyText(String),
    #[error("example id `{0}` appears more than once")]
    DuplicateId(String),
}

/// Train split (proposer grounding) and annotation split (scoring), with the
/// class vocabulary in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    train: Vec<LabeledExample>,
    annotation: Vec<LabeledExample>,
    class_names: Vec<String>,
}

impl DatasetSplits {
    pub fn new(
        train: Vec<LabeledExample>,
        annotation: Vec<LabeledExample>,
        class_names: Vec<String>,
    ) -> Result<Self, SplitError> {
        if class_names.len() < 2 {
            return Err(SplitError::TooFewClasses(class_names.len()));
        }
        let classes: HashSet<&String> = class_names.iter().collect();
        if classes.len() != class_names.len() {
            return Err(SplitError::DuplicateClass);
        }
        let mut ids = HashSet::new();
        for ex in train.iter().chain(annotation.iter()) {
            if ex.text.trim().is_empty() {
                return Err(SplitError::EmptyText(ex.id.clone()));
            }
            if !classes.contains(&ex.label) {
                return Err(SplitError::UnknownLabel {
                    id: ex.id.clone(),
                    label: ex.label.clone(),
                });
            }
            if !ids.insert(ex.id.as_str()) {
                return Err(SplitError::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Self {
            train,
            annotation,
            class_names,
        })
    }

    pub fn train(&self) -> &[LabeledExample] {
        &self.train
    }

    pub fn annotation(&self) -> &[LabeledExample] {
        &self.annotation
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub set_id: usize,
    pub examples: Vec<LabeledExample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("train split has {have} examples, fewer than the example-set size {need}")]
pub struct TrainTooSmall {
    pub have: usize,
    pub need: usize,
}

/// Draws `n_sets` example sets of `l` examples each. Within a set examples are
/// sampled uniformly without replacement; sets are drawn independently and may
/// overlap.
pub fn sample_example_sets(
    train: &[LabeledExample],
    n_sets: usize,
    l: usize,
    seed: u64,
) -> Result<Vec<ExampleSet>, TrainTooSmall> {
    if train.len() < l {
        return Err(TrainTooSmall {
            have: train.len(),
            need: l,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_sets)
        .map(|set_id| ExampleSet {
            set_id,
            examples: index::sample(&mut rng, train.len(), l)
                .into_iter()
                .map(|i| train[i].clone())
                .collect(),
        })
        .collect())
}

/// Class-stratified variant: each set receives per-class quotas proportional
/// to the train distribution (largest remainder), sampled without replacement.
pub fn sample_example_sets_stratified(
    train: &[LabeledExample],
    n_sets: usize,
    l: usize,
    seed: u64,
) -> Result<Vec<ExampleSet>, TrainTooSmall> {
    if train.len() < l {
        return Err(TrainTooSmall {
            have: train.len(),
            need: l,
        });
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in train.iter().enumerate() {
        by_class.entry(ex.label.as_str()).or_default().push(i);
    }
    let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
    let quotas = largest_remainder(&counts, l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_sets)
        .map(|set_id| {
            let mut examples = Vec::with_capacity(l);
            for (members, &q) in by_class.values().zip(&quotas) {
                for i in index::sample(&mut rng, members.len(), q) {
                    examples.push(train[members[i]].clone());
                }
            }
            ExampleSet { set_id, examples }
        })
        .collect())
}

/// Splits `total` proportionally to `weights` with the largest-remainder rule,
/// never exceeding any weight.
pub fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let total = total.min(sum);
    let mut quotas: Vec<usize> = weights.iter().map(|&w| w * total / sum).collect();
    let mut rema: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| ((w * total) % sum, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - quotas.iter().sum::<usize>();
    for &(_, i) in rema.iter().cycle() {
        if left == 0 {
            break;
        }
        if quotas[i] < weights[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// The optimization variable: an (instruction, example set) pair given as
/// indices into the search-space pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub instruction_id: usize,
    pub example_set_id: usize,
}

impl PromptCandidate {
    pub fn new(instruction_id: usize, example_set_id: usize) -> Self {
        Self {
            instruction_id,
            example_set_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingReason {
    ExtractionRefused,
    ParseFailed,
    OutOfVocabulary,
}

impl MissingReason {
    pub fn as_str(self) -> &'static str {
        match self {
            MissingReason::ExtractionRefused => "extraction-refused",
            MissingReason::ParseFailed => "parse-failed",
            MissingReason::OutOfVocabulary => "out-of-vocabulary",
        }
    }
}

/// One realized feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum FeatureValue {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Categorical(String),
    Missing(MissingReason),
}

impl FeatureValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, FeatureValue::Missing(_))
    }

    /// Whether this value may be stored under a feature of type `ty`.
    pub fn conforms_to(&self, ty: &FeatureValueType) -> bool {
        match (self, ty) {
            (FeatureValue::Missing(_), _) => true,
            (FeatureValue::Boolean(_), FeatureValueType::Boolean) => true,
            (FeatureValue::Integer(_), FeatureValueType::Integer) => true,
            (FeatureValue::Real(x), FeatureValueType::Real) => x.is_finite(),
            (FeatureValue::Categorical(c), FeatureValueType::Categorical(cats)) => cats.contains(c),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub label: String,
    pub values: Vec<FeatureValue>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("row `{id}` has {got} values, expected {expected}")]
    Ragged { id: String, got: usize, expected: usize },
    #[error("row id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("row `{id}`: value for `{feature}` does not match its declared type")]
    TypeMismatch { id: String, feature: String },
}

/// Realized feature vectors over a set of examples, aligned to the schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    feature_set: FeatureSet,
    rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(feature_set: FeatureSet, rows: Vec<FeatureRow>) -> Result<Self, MatrixError> {
        let k = feature_set.len();
        let mut ids = HashSet::new();
        for row in &rows {
            if row.values.len() != k {
                return Err(MatrixError::Ragged {
                    id: row.id.clone(),
                    got: row.values.len(),
                    expected: k,
                });
            }
            if !ids.insert(row.id.as_str()) {
                return Err(MatrixError::DuplicateId(row.id.clone()));
            }
            for (v, def) in row.values.iter().zip(feature_set.features()) {
                if !v.conforms_to(&def.value_type) {
                    return Err(MatrixError::TypeMismatch {
                        id: row.id.clone(),
                        feature: def.name.clone(),
                    });
                }
            }
        }
        Ok(Self { feature_set, rows })
    }

    pub fn feature_set(&self) -> &FeatureSet {
        &self.feature_set
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = &FeatureValue> {
        self.rows.iter().map(move |r| &r.values[j])
    }

    /// Subset of rows by position, keeping the schema.
    pub fn select(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_set: self.feature_set.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

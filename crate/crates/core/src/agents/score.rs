use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::lm::{CallTag, Field, Gateway, Message, ModuleRole, Shape};
use crate::model::{serialize_feature_schema, FeatureSet};

use super::prompts::INTERPRETABILITY_SCORER;
use super::{AgentError, AgentSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInterpretability {
    pub name: String,
    pub readable: f64,
    pub human_worded: f64,
    pub understandable: f64,
    pub meaningful: f64,
    pub trackable: f64,
    pub leakage_flag: bool,
    pub rationale: String,
}

impl FeatureInterpretability {
    /// 0 when leaking, otherwise the mean of the five criteria.
    pub fn contribution(&self) -> f64 {
        if self.leakage_flag {
            0.0
        } else {
            (self.readable + self.human_worded + self.understandable + self.meaningful + self.trackable) / 5.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityReport {
    pub per_feature: Vec<FeatureInterpretability>,
    pub set_score: f64,
    pub feedback_text: String,
}

impl InterpretabilityReport {
    /// Builds a report with the set score computed from the per-feature fields.
    pub fn new(per_feature: Vec<FeatureInterpretability>, feedback_text: String) -> Self {
        let set_score = Self::set_score_of(&per_feature);
        Self {
            per_feature,
            set_score,
            feedback_text,
        }
    }

    pub fn set_score_of(per_feature: &[FeatureInterpretability]) -> f64 {
        if per_feature.is_empty() {
            return 0.0;
        }
        per_feature.iter().map(FeatureInterpretability::contribution).sum::<f64>() / per_feature.len() as f64
    }
}

const CRITERIA: [&str; 5] = ["readable", "human_worded", "understandable", "meaningful", "trackable"];

fn scorer_shape() -> Shape {
    let mut fields = vec![Field::required("name", Shape::String, "feature name")];
    for c in CRITERIA {
        fields.push(Field::required(c, Shape::Number, "0 to 10"));
    }
    fields.push(Field::required("leakage", Shape::Boolean, "true if it restates the label"));
    fields.push(Field::required("rationale", Shape::String, "one sentence"));
    Shape::Object(vec![
        Field::required("reasoning", Shape::String, "think step by step"),
        Field::required("features", Shape::Array(Box::new(Shape::Object(fields))), "one entry per feature"),
        Field::required("feedback", Shape::String, "feedback on the whole feature set"),
    ])
}

fn criterion(entry: &Value, key: &str) -> f64 {
    entry
        .get(key)
        .and_then(Value::as_f64)
        .map(|v| if v.is_finite() { v.clamp(0.0, 10.0) / 10.0 } else { 0.0 })
        .unwrap_or(0.0)
}

/// Scores each feature on five interpretability criteria (0-10, mapped to
/// [0,1]) with one LM call. Features in `leakage_hints` are always flagged.
/// The set score is computed here, never taken from the LM.
pub fn score_interpretability(
    gateway: &Gateway,
    candidate: Option<u64>,
    fs: &FeatureSet,
    class_names: &[String],
    leakage_hints: &[String],
    settings: &AgentSettings,
) -> Result<InterpretabilityReport, AgentError> {
    let shape = scorer_shape();
    let system = INTERPRETABILITY_SCORER.render(&[("schema", &shape.describe())]);
    let user = format!(
        "Labels of the classification task: {}\n\nFeature schema:\n{}",
        class_names.join(", "),
        serialize_feature_schema(fs)
    );
    let (value, _) = gateway.complete_structured(
        CallTag::new(ModuleRole::InterpretabilityScorer, candidate),
        &[Message::system(system), Message::user(user)],
        &settings.scorer,
        &shape,
        settings.parse_retries,
    )?;

    let entries = value["features"].as_array().cloned().unwrap_or_default();
    let mut forced = Vec::new();
    let per_feature = fs
        .features()
        .iter()
        .map(|f| {
            let entry = entries.iter().find(|e| e["name"].as_str().map(str::trim) == Some(f.name.as_str()));
            let hinted = leakage_hints.contains(&f.name);
            let lm_flag = entry.and_then(|e| e["leakage"].as_bool()).unwrap_or(false);
            if hinted && !lm_flag {
                forced.push(f.name.clone());
            }
            match entry {
                Some(e) => FeatureInterpretability {
                    name: f.name.clone(),
                    readable: criterion(e, "readable"),
                    human_worded: criterion(e, "human_worded"),
                    understandable: criterion(e, "understandable"),
                    meaningful: criterion(e, "meaningful"),
                    trackable: criterion(e, "trackable"),
                    leakage_flag: lm_flag || hinted,
                    rationale: e["rationale"].as_str().unwrap_or_default().to_string(),
                },
                None => FeatureInterpretability {
                    name: f.name.clone(),
                    readable: 0.0,
                    human_worded: 0.0,
                    understandable: 0.0,
                    meaningful: 0.0,
                    trackable: 0.0,
                    leakage_flag: hinted,
                    rationale: "not scored".into(),
                },
            }
        })
        .collect();

    let mut feedback = value["feedback"].as_str().unwrap_or_default().trim().to_string();
    if !forced.is_empty() {
        if !feedback.is_empty() {
            feedback.push_str("\n\n");
        }
        feedback.push_str(&format!(
            "The automatic guard flagged these features as leaking the label: {}.",
            forced.join(", ")
        ));
    }
    if feedback.is_empty() {
        feedback = "No interpretability feedback was given.".into();
    }
    Ok(InterpretabilityReport::new(per_feature, feedback))
}

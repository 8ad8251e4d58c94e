use crate::lm::{CallTag, Field, Gateway, Message, ModuleRole, Shape};
use crate::model::{validate_feature_set, ExampleSet, FeatureSet, RawFeatureSet};

use super::prompts::FEATURE_PROPOSER;
use super::{fit_texts, AgentError, AgentSettings};

pub(crate) fn proposal_shape() -> Shape {
    let feature = Shape::Object(vec![
        Field::required("name", Shape::String, "snake_case"),
        Field::required("type", Shape::String, "boolean | integer | float | categorical"),
        Field::optional("categories", Shape::Array(Box::new(Shape::String)), "categorical only"),
        Field::required("description", Shape::String, ""),
        Field::required("extraction_prompt", Shape::String, ""),
    ]);
    Shape::Object(vec![
        Field::required("reasoning", Shape::String, "think step by step"),
        Field::required("features", Shape::Array(Box::new(feature)), ""),
    ])
}

/// Asks the feature proposer for a schema given an instruction and an example
/// set, then validates it.
pub fn propose_features(
    gateway: &Gateway,
    candidate: Option<u64>,
    instruction: &str,
    example_set: &ExampleSet,
    class_names: &[String],
    settings: &AgentSettings,
) -> Result<FeatureSet, AgentError> {
    if instruction.trim().is_empty() {
        return Err(AgentError::Precondition("instruction is empty".into()));
    }
    let shape = proposal_shape();
    let system = FEATURE_PROPOSER.render(&[
        ("min_features", &settings.min_features.to_string()),
        ("max_features", &settings.max_features.to_string()),
        ("schema", &shape.describe()),
    ]);
    let head = format!(
        "Instruction:\n{}\n\nLabels: {}\n\nLabelled examples:\n",
        instruction.trim(),
        class_names.join(", ")
    );
    let texts: Vec<&str> = example_set.examples.iter().map(|e| e.text.as_str()).collect();
    let per_example_overhead: usize = example_set.examples.iter().map(|e| e.label.len() + 24).sum();
    let texts = fit_texts(
        &texts,
        system.len() + head.len() + per_example_overhead,
        settings.context_char_budget,
    );
    let mut user = head;
    for (i, (ex, text)) in example_set.examples.iter().zip(&texts).enumerate() {
        user.push_str(&format!("[{}] label: {}\n{}\n\n", i + 1, ex.label, text));
    }

    let (value, _) = gateway.complete_structured(
        CallTag::new(ModuleRole::Proposer, candidate),
        &[Message::system(system), Message::user(user.trim_end())],
        &settings.proposer,
        &shape,
        settings.parse_retries,
    )?;
    let raw: RawFeatureSet = serde_json::from_value(value).map_err(|e| {
        AgentError::Lm(crate::lm::LmError::SchemaViolation {
            errors: vec![e.to_string()],
        })
    })?;
    Ok(validate_feature_set(&raw)?)
}

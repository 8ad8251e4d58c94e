use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::lm::{CallTag, Field, Gateway, Message, ModuleRole, Shape};

use super::prompts::REFLECTIVE_PROPOSER;
use super::summary::DataSummary;
use super::AgentSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposerMode {
    #[default]
    Reflective,
    ScalarOnly,
}

impl ProposerMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "reflective" => Some(Self::Reflective),
            "scalar" | "scalar_only" => Some(Self::ScalarOnly),
            _ => None,
        }
    }
}

/// What the reflective proposer sees about the current instruction.
#[derive(Debug, Clone, Copy)]
pub struct ReflectionInput<'a> {
    pub summary: &'a DataSummary,
    pub current_instruction: &'a str,
    pub interp_feedback: &'a str,
    pub perf_feedback: &'a str,
    pub combined_score: f64,
    /// Refinement round, used to attribute calls.
    pub round: u64,
}

fn reflect_shape() -> Shape {
    Shape::Object(vec![
        Field::required("reasoning", Shape::String, "think step by step"),
        Field::required("instructions", Shape::Array(Box::new(Shape::String)), "new instructions"),
    ])
}

fn user_prompt(input: &ReflectionInput<'_>, mode: ProposerMode, avoid: &[String]) -> String {
    let mut user = format!(
        "Data summary:\n{}\n\nCurrent instruction:\n{}\n\n",
        input.summary.render(),
        input.current_instruction.trim()
    );
    match mode {
        ProposerMode::Reflective => {
            user.push_str(&format!(
                "Feedback on interpretability:\n{}\n\nFeedback on classifier performance:\n{}\n\nCombined score: {:.4}",
                input.interp_feedback.trim(),
                input.perf_feedback.trim(),
                input.combined_score
            ));
        }
        ProposerMode::ScalarOnly => {
            user.push_str(&format!("Combined score: {:.4}", input.combined_score));
        }
    }
    if !avoid.is_empty() {
        user.push_str("\n\nAlready proposed, do not repeat:\n");
        for a in avoid {
            user.push_str(&format!("- {a}\n"));
        }
    }
    user.trim_end().to_string()
}

fn normalized(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn ask(
    gateway: &Gateway,
    input: &ReflectionInput<'_>,
    mode: ProposerMode,
    avoid: &[String],
    item: u64,
    k: usize,
    settings: &AgentSettings,
) -> Option<Vec<String>> {
    let shape = reflect_shape();
    let system = REFLECTIVE_PROPOSER.render(&[("k", &k.to_string()), ("schema", &shape.describe())]);
    let messages = [Message::system(system), Message::user(user_prompt(input, mode, avoid))];
    let tag = CallTag::new(ModuleRole::ReflectiveProposer, None).item(item);
    match gateway.complete_structured(tag, &messages, &settings.reflective, &shape, settings.parse_retries) {
        Ok((value, _)) => Some(
            value["instructions"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_str()).map(|s| s.trim().to_string()).collect())
                .unwrap_or_default(),
        ),
        Err(e) => {
            warn!(error = %e, "reflective proposer failed");
            None
        }
    }
}

/// Proposes `k` distinct new instructions. Duplicates trigger one re-ask,
/// then numbered variants pad the list. A hard failure yields the current
/// instruction alone.
pub fn reflect_instructions(
    gateway: &Gateway,
    input: &ReflectionInput<'_>,
    k: usize,
    mode: ProposerMode,
    settings: &AgentSettings,
) -> Vec<String> {
    let k = k.max(1);
    let mut seen: BTreeSet<String> = BTreeSet::from([normalized(input.current_instruction)]);
    let mut out: Vec<String> = Vec::new();
    let mut take = |candidates: Vec<String>, out: &mut Vec<String>| {
        for c in candidates {
            if out.len() < k && !c.is_empty() && seen.insert(normalized(&c)) {
                out.push(c);
            }
        }
    };

    let Some(first) = ask(gateway, input, mode, &[], input.round * 2, k, settings) else {
        return vec![input.current_instruction.to_string()];
    };
    take(first, &mut out);
    if out.len() < k {
        if let Some(more) = ask(gateway, input, mode, &out, input.round * 2 + 1, k - out.len(), settings) {
            take(more, &mut out);
        }
    }
    let base = out.first().cloned().unwrap_or_else(|| input.current_instruction.trim().to_string());
    let mut n = 1;
    while out.len() < k {
        let variant = format!("{base} (variant {n})");
        n += 1;
        take(vec![variant], &mut out);
    }
    out
}

//! Versioned prompt templates. Helper-module prompts are fixed; only the
//! proposer's instruction and examples vary during optimization.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub text: &'static str,
}

pub const FEATURE_PROPOSER: Template = Template {
    id: "feature_proposer.v1",
    text: include_str!("../../templates/feature_proposer.v1.txt"),
};

pub const EXTRACTOR: Template = Template {
    id: "extractor.v1",
    text: include_str!("../../templates/extractor.v1.txt"),
};

pub const INTERPRETABILITY_SCORER: Template = Template {
    id: "interpretability_scorer.v1",
    text: include_str!("../../templates/interpretability_scorer.v1.txt"),
};

pub const PERFORMANCE_FEEDBACK: Template = Template {
    id: "performance_feedback.v1",
    text: include_str!("../../templates/performance_feedback.v1.txt"),
};

pub const REFLECTIVE_PROPOSER: Template = Template {
    id: "reflective_proposer.v1",
    text: include_str!("../../templates/reflective_proposer.v1.txt"),
};

pub const ALL: [Template; 5] = [
    FEATURE_PROPOSER,
    EXTRACTOR,
    INTERPRETABILITY_SCORER,
    PERFORMANCE_FEEDBACK,
    REFLECTIVE_PROPOSER,
];

/// First line of each system prompt; stable across template versions so
/// transcripts can route requests by module.
pub const PROPOSER_MARKER: &str = "ROLE: FeatureProposer";
pub const EXTRACTOR_MARKER: &str = "ROLE: Extractor";
pub const SCORER_MARKER: &str = "ROLE: InterpretabilityScorer";
pub const FEEDBACK_MARKER: &str = "ROLE: PerformanceFeedback";
pub const REFLECTIVE_MARKER: &str = "ROLE: ReflectiveProposer";

impl Template {
    /// Substitutes `{{key}}` placeholders.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.trim_end().to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

/// Template ids keyed by module, for run manifests and trial logs.
pub fn template_versions() -> BTreeMap<&'static str, &'static str> {
    ALL.iter()
        .map(|t| (t.id.split('.').next().unwrap_or(t.id), t.id))
        .collect()
}

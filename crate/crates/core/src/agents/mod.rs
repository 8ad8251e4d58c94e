//! Request builders and response parsers for the LM modules: feature
//! proposer, extractor, interpretability scorer, performance feedback and
//! reflective proposer, plus the data summary fed to the latter.

mod extract;
mod feedback;
pub mod prompts;
mod propose;
mod reflect;
mod score;
mod summary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{GenerationParams, LmError};
use crate::model::ValidationErrors;

pub use extract::{coerce_value, extract, extract_all};
pub use feedback::{fallback_feedback, performance_feedback, render_metrics_table};
pub use propose::propose_features;
pub use reflect::{reflect_instructions, ProposerMode, ReflectionInput};
pub use score::{score_interpretability, FeatureInterpretability, InterpretabilityReport};
pub use summary::{build_data_summary, DataSummary};

/// Seed instruction for the feature proposer when none is configured.
pub const DEFAULT_SEED_INSTRUCTION: &str = "Propose distinct, human-interpretable properties of the text, \
each checkable from the text alone, that help distinguish the given labels";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("proposed features failed validation: {0}")]
    ValidationFailed(#[from] ValidationErrors),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Generation settings per module plus prompt sizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub proposer: GenerationParams,
    pub extractor: GenerationParams,
    pub scorer: GenerationParams,
    pub feedback: GenerationParams,
    pub reflective: GenerationParams,
    pub parse_retries: u32,
    /// Request size cap in characters; example texts are truncated to fit,
    /// instructions never are.
    pub context_char_budget: usize,
    pub min_features: usize,
    pub max_features: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            proposer: GenerationParams {
                temperature: 0.75,
                top_p: 0.95,
                max_tokens: 4096,
                seed: None,
            },
            extractor: GenerationParams::greedy(1024),
            scorer: GenerationParams::greedy(4096),
            feedback: GenerationParams::greedy(2048),
            reflective: GenerationParams::greedy(4096),
            parse_retries: 2,
            context_char_budget: 48_000,
            min_features: 5,
            max_features: 10,
        }
    }
}

/// Truncates texts so that `fixed_len` plus their total length fits in
/// `budget` characters. The longest texts are cut first, to a common cap.
pub fn fit_texts(texts: &[&str], fixed_len: usize, budget: usize) -> Vec<String> {
    let lens: Vec<usize> = texts.iter().map(|t| t.chars().count()).collect();
    let available = budget.saturating_sub(fixed_len);
    if lens.iter().sum::<usize>() <= available {
        return texts.iter().map(|t| t.to_string()).collect();
    }
    // largest cap c with sum(min(len, c)) <= available
    let mut sorted = lens.clone();
    sorted.sort_unstable();
    let mut used = 0;
    let mut cap = 0;
    for (i, &l) in sorted.iter().enumerate() {
        let remaining = sorted.len() - i;
        if used + l * remaining <= available {
            used += l;
            cap = l;
        } else {
            cap = cap.max((available - used) / remaining);
            break;
        }
    }
    texts
        .iter()
        .zip(&lens)
        .map(|(t, &l)| {
            if l <= cap {
                t.to_string()
            } else {
                let mut s: String = t.chars().take(cap.saturating_sub(1)).collect();
                s.push('…');
                s
            }
        })
        .collect()
}

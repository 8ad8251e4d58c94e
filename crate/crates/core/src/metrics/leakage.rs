//! Deterministic label-leakage guard.

use serde::{Deserialize, Serialize};

use crate::model::FeatureMatrix;

use super::mi::{label_entropy, mutual_information};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageConfig {
    /// Flag names whose tokens include "label" or a class-name token.
    pub name_rule: bool,
    /// Flag when `MI(f; Y) / H(Y)` reaches this value.
    pub mi_threshold: f64,
    /// The MI rule is applied only with at least this many rows.
    pub min_rows_for_mi: usize,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            name_rule: true,
            mi_threshold: 0.95,
            min_rows_for_mi: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LeakageReason {
    NameToken { token: String },
    HighMutualInformation { normalized_mi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageFlag {
    pub feature: String,
    pub reasons: Vec<LeakageReason>,
}

fn tokens(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Name tokens of `name` that leak the label, if any.
pub fn leaky_name_token(name: &str, class_names: &[String]) -> Option<String> {
    let class_tokens: Vec<String> = class_names.iter().flat_map(|c| tokens(c).collect::<Vec<_>>()).collect();
    name.split('_')
        .map(str::to_lowercase)
        .find(|t| t == "label" || class_tokens.contains(t))
}

pub fn detect_leakage(matrix: &FeatureMatrix, class_names: &[String], config: &LeakageConfig) -> Vec<LeakageFlag> {
    let h_y = label_entropy(matrix);
    let use_mi = matrix.n_rows() >= config.min_rows_for_mi && h_y > 0.0;
    let mut flags = Vec::new();
    for (j, def) in matrix.feature_set().features().iter().enumerate() {
        let mut reasons = Vec::new();
        if config.name_rule {
            if let Some(token) = leaky_name_token(&def.name, class_names) {
                reasons.push(LeakageReason::NameToken { token });
            }
        }
        if use_mi {
            let normalized_mi = mutual_information(matrix, j) / h_y;
            if normalized_mi >= config.mi_threshold {
                reasons.push(LeakageReason::HighMutualInformation { normalized_mi });
            }
        }
        if !reasons.is_empty() {
            flags.push(LeakageFlag {
                feature: def.name.clone(),
                reasons,
            });
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<String> {
        ["bearish", "neutral", "bullish"].map(String::from).to_vec()
    }

    #[test]
    fn name_rule() {
        assert_eq!(leaky_name_token("sentiment_label", &classes()).as_deref(), Some("label"));
        assert_eq!(leaky_name_token("bullish_terms", &classes()).as_deref(), Some("bullish"));
        assert_eq!(leaky_name_token("job_loss_indicator", &classes()), None);
        // substring matches do not count, only whole tokens
        assert_eq!(leaky_name_token("labeled_entity_count", &classes()), None);
        let toxic = vec!["toxic".to_string(), "non-toxic".to_string()];
        assert_eq!(leaky_name_token("is_toxic", &toxic).as_deref(), Some("toxic"));
    }
}

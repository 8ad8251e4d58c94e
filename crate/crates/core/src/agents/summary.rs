use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::LabeledExample;

use super::AgentError;

pub const SNIPPETS_PER_CLASS: usize = 2;
pub const SNIPPET_CHARS: usize = 240;
const HINT_TERMS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub class_counts: BTreeMap<String, usize>,
    pub snippets: BTreeMap<String, Vec<String>>,
    pub mean_text_chars: f64,
    pub vocabulary_hints: Vec<String>,
}

impl DataSummary {
    pub fn render(&self) -> String {
        let mut out = String::from("Class distribution:\n");
        for (c, n) in &self.class_counts {
            out.push_str(&format!("- {c}: {n}\n"));
        }
        out.push_str(&format!("Mean text length: {:.0} characters\n", self.mean_text_chars));
        if !self.vocabulary_hints.is_empty() {
            out.push_str(&format!("Frequent terms: {}\n", self.vocabulary_hints.join(", ")));
        }
        out.push_str("Sample texts:\n");
        for (c, snippets) in &self.snippets {
            for s in snippets {
                out.push_str(&format!("[{c}] {s}\n"));
            }
        }
        out.trim_end().to_string()
    }
}

fn snippet(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= SNIPPET_CHARS {
        flat
    } else {
        let mut s: String = flat.chars().take(SNIPPET_CHARS - 1).collect();
        s.push('…');
        s
    }
}

/// Terms frequent in the corpus, weighted towards those appearing in few
/// classes. Stopword-like terms present in every class are dropped.
fn vocabulary_hints(train: &[LabeledExample], n_classes: usize) -> Vec<String> {
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut classes: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for ex in train {
        let terms: BTreeSet<String> = ex
            .text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= 4)
            .map(str::to_lowercase)
            .collect();
        for t in terms {
            classes.entry(t.clone()).or_default().insert(ex.label.as_str());
            *doc_freq.entry(t).or_default() += 1;
        }
    }
    let mut scored: Vec<(usize, String)> = doc_freq
        .into_iter()
        .filter(|(t, df)| *df >= 2 && (n_classes < 2 || classes[t].len() < n_classes))
        .map(|(t, df)| (df, t))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(HINT_TERMS).map(|(_, t)| t).collect()
}

/// Summarizes the train split for the reflective proposer.
pub fn build_data_summary(train: &[LabeledExample], seed: u64) -> Result<DataSummary, AgentError> {
    if train.is_empty() {
        return Err(AgentError::Precondition("train split is empty".into()));
    }
    let mut by_class: BTreeMap<String, Vec<&LabeledExample>> = BTreeMap::new();
    for ex in train {
        by_class.entry(ex.label.clone()).or_default().push(ex);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut snippets = BTreeMap::new();
    for (class, members) in &by_class {
        let mut sorted = members.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        sorted.shuffle(&mut rng);
        snippets.insert(
            class.clone(),
            sorted.iter().take(SNIPPETS_PER_CLASS).map(|e| snippet(&e.text)).collect(),
        );
    }
    let total: usize = train.iter().map(|e| e.text.chars().count()).sum();
    Ok(DataSummary {
        class_counts: by_class.iter().map(|(c, m)| (c.clone(), m.len())).collect(),
        snippets,
        mean_text_chars: total as f64 / train.len() as f64,
        vocabulary_hints: vocabulary_hints(train, by_class.len()),
    })
}

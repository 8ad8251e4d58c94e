//! Deterministic transcript-driven chat backend for offline runs and tests.
//!
//! A transcript is an ordered list of rules. A rule matches a request when
//! every one of its conditions holds: each condition names a substring that
//! must occur in some message (optionally restricted to one role). The first
//! matching rule answers. A rule's n-th hit returns its n-th response; once
//! the list is exhausted the last response repeats unless `repeat_last` is
//! false, in which case the request fails. Requests that match no rule fail.
//!
//! Rules with several responses count hits globally, so they should not be
//! hit by concurrent requests if the order matters.

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{whitespace_tokens, BackendError, ChatBackend, ChatReply, ChatRequest, Role, TokenUsage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub contains: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Transient,
    Timeout,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedResponse {
    Text(String),
    Error {
        error: ScriptedFailure,
        #[serde(default)]
        status: Option<u16>,
    },
    Full {
        text: String,
        #[serde(default)]
        prompt_tokens: Option<u64>,
        #[serde(default)]
        completion_tokens: Option<u64>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub when: Vec<Condition>,
    pub responses: Vec<ScriptedResponse>,
    #[serde(default = "yes")]
    pub repeat_last: bool,
}

impl Rule {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            when: vec![],
            responses: vec![],
            repeat_last: true,
        }
    }

    pub fn when(mut self, role: Option<Role>, contains: impl Into<String>) -> Self {
        self.when.push(Condition {
            role,
            contains: contains.into(),
        });
        self
    }

    pub fn reply(mut self, text: impl Into<String>) -> Self {
        self.responses.push(ScriptedResponse::Text(text.into()));
        self
    }

    pub fn fail(mut self, error: ScriptedFailure) -> Self {
        self.responses.push(ScriptedResponse::Error { error, status: None });
        self
    }

    pub fn once(mut self) -> Self {
        self.repeat_last = false;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default = "default_model")]
    pub model_id: String,
    pub rules: Vec<Rule>,
}

fn default_model() -> String {
    "scripted".into()
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot read transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed transcript: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule `{0}` has no responses")]
    NoResponses(String),
    #[error("cannot index transcript conditions: {0}")]
    Index(String),
}

pub struct ScriptedLm {
    model_id: String,
    rules: Vec<Rule>,
    /// Needle ids per rule, paired with the required role.
    conditions: Vec<Vec<(usize, Option<Role>)>>,
    matcher: Option<AhoCorasick>,
    hits: Vec<AtomicUsize>,
}

impl ScriptedLm {
    pub fn new(transcript: Transcript) -> Result<Self, TranscriptError> {
        let mut needles: Vec<String> = Vec::new();
        let mut conditions = Vec::with_capacity(transcript.rules.len());
        for rule in &transcript.rules {
            if rule.responses.is_empty() {
                return Err(TranscriptError::NoResponses(rule.name.clone()));
            }
            let mut conds = Vec::with_capacity(rule.when.len());
            for c in &rule.when {
                let id = match needles.iter().position(|n| *n == c.contains) {
                    Some(id) => id,
                    None => {
                        needles.push(c.contains.clone());
                        needles.len() - 1
                    }
                };
                conds.push((id, c.role));
            }
            conditions.push(conds);
        }
        let matcher = if needles.is_empty() {
            None
        } else {
            Some(AhoCorasick::new(&needles).map_err(|e| TranscriptError::Index(e.to_string()))?)
        };
        Ok(Self {
            model_id: transcript.model_id,
            hits: transcript.rules.iter().map(|_| AtomicUsize::new(0)).collect(),
            rules: transcript.rules,
            conditions,
            matcher,
        })
    }

    pub fn from_rules(rules: Vec<Rule>) -> Result<Self, TranscriptError> {
        Self::new(Transcript {
            model_id: default_model(),
            rules,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, TranscriptError> {
        let text = std::fs::read_to_string(path)?;
        Self::new(serde_json::from_str(&text)?)
    }

    /// Number of times each rule has answered, in rule order.
    pub fn hit_counts(&self) -> Vec<(String, usize)> {
        self.rules
            .iter()
            .zip(&self.hits)
            .map(|(r, h)| (r.name.clone(), h.load(Ordering::SeqCst)))
            .collect()
    }

    fn find_rule(&self, request: &ChatRequest) -> Option<usize> {
        let mut found: HashSet<(usize, Option<Role>)> = HashSet::new();
        if let Some(ac) = &self.matcher {
            for m in &request.messages {
                for hit in ac.find_overlapping_iter(&m.content) {
                    let id = hit.pattern().as_usize();
                    found.insert((id, Some(m.role)));
                    found.insert((id, None));
                }
            }
        }
        self.conditions
            .iter()
            .position(|conds| conds.iter().all(|c| found.contains(c)))
    }
}

impl ChatBackend for ScriptedLm {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let Some(idx) = self.find_rule(request) else {
            let last = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
            let preview: String = last.chars().take(160).collect();
            return Err(BackendError::Unmatched(preview));
        };
        let rule = &self.rules[idx];
        let hit = self.hits[idx].fetch_add(1, Ordering::SeqCst);
        let response = match rule.responses.get(hit) {
            Some(r) => r,
            None if rule.repeat_last => rule.responses.last().expect("non-empty"),
            None => {
                return Err(BackendError::Unmatched(format!(
                    "rule `{}` exhausted after {} responses",
                    rule.name,
                    rule.responses.len()
                )))
            }
        };
        let prompt_proxy: u64 = request.messages.iter().map(|m| whitespace_tokens(&m.content)).sum();
        let (text, prompt_tokens, completion_tokens) = match response {
            ScriptedResponse::Text(t) => (t.clone(), None, None),
            ScriptedResponse::Full {
                text,
                prompt_tokens,
                completion_tokens,
            } => (text.clone(), *prompt_tokens, *completion_tokens),
            ScriptedResponse::Error { error, status } => {
                return Err(match error {
                    ScriptedFailure::Transient => BackendError::Transient(format!("scripted failure `{}`", rule.name)),
                    ScriptedFailure::Timeout => BackendError::Timeout,
                    ScriptedFailure::Rejected => BackendError::Rejected {
                        status: status.unwrap_or(400),
                        body: format!("scripted rejection `{}`", rule.name),
                    },
                })
            }
        };
        Ok(ChatReply {
            usage: TokenUsage {
                prompt_tokens: prompt_tokens.unwrap_or(prompt_proxy),
                completion_tokens: completion_tokens.unwrap_or_else(|| whitespace_tokens(&text)),
                model_id: self.model_id.clone(),
            },
            text,
        })
    }
}

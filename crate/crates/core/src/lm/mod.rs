//! Chat-completion access: backends (HTTP, scripted), retries with backoff,
//! bounded concurrency, an audit log of every attempt and a usage ledger.

pub mod http;
pub mod scripted;
pub mod structured;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

pub use http::{HttpBackend, LmEndpoint};
pub use scripted::ScriptedLm;
pub use structured::{extract_json_object, Field, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Sampling parameters. Greedy decoding is `temperature = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationParams {
    pub fn greedy(max_tokens: u32) -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens,
            seed: None,
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub model_id: String,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// One request as sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    /// Worth retrying: connection failures, 429, 5xx.
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("no scripted response matches the request: {0}")]
    Unmatched(String),
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("endpoint rejected the request with status {status}: {body}")]
    EndpointRejected { status: u16, body: String },
    #[error("scripted backend has no response: {0}")]
    Unmatched(String),
    #[error("structured output invalid after retries: {}", .errors.join("; "))]
    SchemaViolation { errors: Vec<String> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl LmError {
    /// True when the failure says the endpoint itself is unusable, as opposed
    /// to a bad generation.
    pub fn is_unavailability(&self) -> bool {
        matches!(
            self,
            LmError::Transport { .. } | LmError::Timeout { .. } | LmError::EndpointRejected { .. }
        )
    }
}

/// Which agent module issued a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleRole {
    Proposer,
    Extractor,
    InterpretabilityScorer,
    PerformanceFeedback,
    ReflectiveProposer,
    Probe,
}

impl ModuleRole {
    pub const ALL: [ModuleRole; 6] = [
        ModuleRole::Proposer,
        ModuleRole::Extractor,
        ModuleRole::InterpretabilityScorer,
        ModuleRole::PerformanceFeedback,
        ModuleRole::ReflectiveProposer,
        ModuleRole::Probe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleRole::Proposer => "proposer",
            ModuleRole::Extractor => "extractor",
            ModuleRole::InterpretabilityScorer => "interpretability_scorer",
            ModuleRole::PerformanceFeedback => "performance_feedback",
            ModuleRole::ReflectiveProposer => "reflective_proposer",
            ModuleRole::Probe => "probe",
        }
    }
}

impl fmt::Display for ModuleRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Attribution attached to every call: module, candidate (trial index) and
/// item within that candidate (e.g. annotation row). `round` counts
/// structured-output reprompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallTag {
    pub role: ModuleRole,
    pub candidate: Option<u64>,
    pub item: u64,
    #[serde(default)]
    pub round: u32,
}

impl CallTag {
    pub fn new(role: ModuleRole, candidate: Option<u64>) -> Self {
        Self {
            role,
            candidate,
            item: 0,
            round: 0,
        }
    }

    pub fn item(mut self, item: u64) -> Self {
        self.item = item;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Ok,
    Failed { error: String },
}

/// One attempted request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub tag: CallTag,
    pub attempt: u32,
    pub request_digest: String,
    pub status: AttemptStatus,
    pub usage: TokenUsage,
    pub response_digest: Option<String>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageTotals {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, u: &TokenUsage) {
        self.calls += 1;
        self.prompt_tokens += u.prompt_tokens;
        self.completion_tokens += u.completion_tokens;
    }

    fn merge(&mut self, o: &UsageTotals) {
        self.calls += o.calls;
        self.prompt_tokens += o.prompt_tokens;
        self.completion_tokens += o.completion_tokens;
    }
}

/// Token usage aggregated per (module role, candidate). Only successful
/// attempts carry usage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<UsageRow>", from = "Vec<UsageRow>")]
pub struct UsageLedger {
    pub entries: BTreeMap<ModuleRole, BTreeMap<Option<u64>, UsageTotals>>,
}

/// Flat serialized form of one ledger cell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UsageRow {
    pub role: ModuleRole,
    pub candidate: Option<u64>,
    #[serde(flatten)]
    pub totals: UsageTotals,
}

impl From<UsageLedger> for Vec<UsageRow> {
    fn from(l: UsageLedger) -> Self {
        l.entries
            .into_iter()
            .flat_map(|(role, m)| m.into_iter().map(move |(candidate, totals)| UsageRow { role, candidate, totals }))
            .collect()
    }
}

impl From<Vec<UsageRow>> for UsageLedger {
    fn from(rows: Vec<UsageRow>) -> Self {
        let mut l = UsageLedger::default();
        for r in rows {
            l.entries.entry(r.role).or_default().entry(r.candidate).or_default().merge(&r.totals);
        }
        l
    }
}

impl UsageLedger {
    pub fn record(&mut self, tag: &CallTag, usage: &TokenUsage) {
        self.entries
            .entry(tag.role)
            .or_default()
            .entry(tag.candidate)
            .or_default()
            .add(usage);
    }

    pub fn role_total(&self, role: ModuleRole) -> UsageTotals {
        let mut t = UsageTotals::default();
        if let Some(m) = self.entries.get(&role) {
            m.values().for_each(|u| t.merge(u));
        }
        t
    }

    pub fn candidate_total(&self, role: ModuleRole, candidate: Option<u64>) -> UsageTotals {
        self.entries
            .get(&role)
            .and_then(|m| m.get(&candidate))
            .copied()
            .unwrap_or_default()
    }

    /// Per-role totals for one candidate.
    pub fn for_candidate(&self, candidate: u64) -> BTreeMap<ModuleRole, UsageTotals> {
        self.entries
            .iter()
            .filter_map(|(role, m)| m.get(&Some(candidate)).map(|u| (*role, *u)))
            .collect()
    }

    pub fn total(&self) -> UsageTotals {
        let mut t = UsageTotals::default();
        for m in self.entries.values() {
            m.values().for_each(|u| t.merge(u));
        }
        t
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_audit(entries: &[AuditEntry]) -> Self {
        let mut l = UsageLedger::default();
        for e in entries {
            if e.status == AttemptStatus::Ok {
                l.record(&e.tag, &e.usage);
            }
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(16)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..12])
}

/// Shared entry point for all LM calls. Safe to use from many threads.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    max_in_flight: usize,
    permits: Semaphore,
    audit: Mutex<Vec<AuditEntry>>,
    ledger: Mutex<UsageLedger>,
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static, retry: RetryPolicy, max_in_flight: usize) -> Self {
        let max_in_flight = max_in_flight.max(1);
        Self {
            backend: Box::new(backend),
            retry,
            max_in_flight,
            permits: Semaphore::new(max_in_flight),
            audit: Mutex::new(Vec::new()),
            ledger: Mutex::new(UsageLedger::default()),
        }
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Sends one chat request, retrying transient failures with exponential
    /// backoff. Every attempt lands in the audit log.
    pub fn complete(
        &self,
        tag: CallTag,
        messages: &[Message],
        params: &GenerationParams,
    ) -> Result<(String, TokenUsage), LmError> {
        match messages.first() {
            None => return Err(LmError::InvalidRequest("messages must not be empty".into())),
            Some(m) if m.role == Role::Assistant => {
                return Err(LmError::InvalidRequest(
                    "first message must be a system or user message".into(),
                ))
            }
            _ => {}
        }
        params.validate().map_err(LmError::InvalidRequest)?;

        let request = ChatRequest {
            model: self.backend.model_id().to_string(),
            messages: messages.to_vec(),
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
            seed: params.seed,
        };
        let contents: Vec<&str> = messages.iter().map(|m| m.content.as_str()).collect();
        let request_digest = digest(&contents);

        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.permits.acquire();
                self.backend.chat(&request)
            };
            let (status, usage, response_digest) = match &result {
                Ok(r) => (AttemptStatus::Ok, r.usage.clone(), Some(digest(&[&r.text]))),
                Err(e) => (
                    AttemptStatus::Failed { error: e.to_string() },
                    TokenUsage {
                        model_id: request.model.clone(),
                        ..TokenUsage::default()
                    },
                    None,
                ),
            };
            self.log(AuditEntry {
                tag,
                attempt,
                request_digest: request_digest.clone(),
                status,
                usage,
                response_digest,
                finished_at: Utc::now(),
            });

            let err = match result {
                Ok(reply) => return Ok((reply.text, reply.usage)),
                Err(e) => e,
            };
            let retryable = matches!(err, BackendError::Transient(_) | BackendError::Timeout);
            if !retryable || attempt >= self.retry.max_retries {
                return Err(match err {
                    BackendError::Transient(last) => LmError::Transport {
                        attempts: attempt + 1,
                        last,
                    },
                    BackendError::Timeout => LmError::Timeout { attempts: attempt + 1 },
                    BackendError::Rejected { status, body } => LmError::EndpointRejected { status, body },
                    BackendError::Unmatched(s) => LmError::Unmatched(s),
                });
            }
            warn!(role = %tag.role, attempt, error = %err, "retrying LM call");
            std::thread::sleep(self.retry.delay(attempt));
            attempt += 1;
        }
    }

    fn log(&self, entry: AuditEntry) {
        if entry.status == AttemptStatus::Ok {
            self.ledger
                .lock()
                .expect("ledger poisoned")
                .record(&entry.tag, &entry.usage);
        }
        self.audit.lock().expect("audit poisoned").push(entry);
    }

    /// Audit entries in completion order.
    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().expect("audit poisoned").clone()
    }

    /// Audit entries in a schedule-independent order: by tag, then attempt.
    pub fn audit_log_sorted(&self) -> Vec<AuditEntry> {
        let mut v = self.audit_log();
        v.sort_by(|a, b| a.tag.cmp(&b.tag).then(a.attempt.cmp(&b.attempt)));
        v
    }

    pub fn usage_ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger poisoned").clone()
    }
}

/// Whitespace-token proxy used where no tokenizer is available.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

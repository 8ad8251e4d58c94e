//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, TokenUsage};

/// Connection settings for one chat-completions endpoint.
#[derive(Clone, Serialize, Deserialize)]
pub struct LmEndpoint {
    pub base_url: String,
    pub model_id: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub max_in_flight: usize,
}

impl std::fmt::Debug for LmEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmEndpoint")
            .field("base_url", &self.base_url)
            .field("model_id", &self.model_id)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("request_timeout", &self.request_timeout)
            .field("max_retries", &self.max_retries)
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpBackend {
    endpoint: LmEndpoint,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: LmEndpoint) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(endpoint.request_timeout)
            .build()
            .map_err(|e| BackendError::Transient(format!("cannot build HTTP client: {e}")))?;
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        Ok(Self { endpoint, url, client })
    }

    pub fn endpoint(&self) -> &LmEndpoint {
        &self.endpoint
    }
}

impl ChatBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        if status.as_u16() == 429 || status.as_u16() == 408 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}: {}", truncate(&body))));
        }
        if !status.is_success() {
            return Err(BackendError::Rejected {
                status: status.as_u16(),
                body: truncate(&body),
            });
        }
        let parsed: CompletionResponse = serde_json::from_str(&body).map_err(|e| BackendError::Rejected {
            status: status.as_u16(),
            body: format!("unparseable completion response ({e}): {}", truncate(&body)),
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let usage = parsed.usage.unwrap_or(Usage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(ChatReply {
            text,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
                model_id: self.endpoint.model_id.clone(),
            },
        })
    }
}

fn truncate(body: &str) -> String {
    const MAX: usize = 500;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

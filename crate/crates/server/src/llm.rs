//! Chat-completion endpoint over HTTP. The key stays in this process; the
//! browser never sees it.

use std::time::Duration;

use serde_json::{json, Value};
use vpatient_core::responder::{ChatRequest, ChatTransport, TransportError};

pub const ENV_ENDPOINT: &str = "AIMS_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "AIMS_LLM_API_KEY";
pub const ENV_TIMEOUT_MS: &str = "AIMS_LLM_TIMEOUT_MS";
pub const ENV_MODEL: &str = "AIMS_LLM_MODEL";

pub const DEFAULT_TIMEOUT_MS: u64 = 15_000;

#[derive(Clone, PartialEq, Eq)]
pub struct LlmConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub model: Option<String>,
}

// keeps the key out of logs
impl std::fmt::Debug for LlmConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmConfig")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .field("timeout_ms", &self.timeout_ms)
            .field("model", &self.model)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{ENV_TIMEOUT_MS} must be a positive integer, got {0:?}")]
    BadTimeout(String),
    #[error("{ENV_ENDPOINT} must be an http(s) URL, got {0:?}")]
    BadEndpoint(String),
}

impl LlmConfig {
    /// Reads the endpoint settings through `get`. `Ok(None)` means no
    /// endpoint is configured.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Option<Self>, ConfigError> {
        let Some(endpoint) = get(ENV_ENDPOINT).filter(|s| !s.trim().is_empty()) else {
            return Ok(None);
        };
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(ConfigError::BadEndpoint(endpoint));
        }
        let timeout_ms = match get(ENV_TIMEOUT_MS) {
            None => DEFAULT_TIMEOUT_MS,
            Some(raw) => match raw.trim().parse::<u64>() {
                Ok(ms) if ms > 0 => ms,
                _ => return Err(ConfigError::BadTimeout(raw)),
            },
        };
        Ok(Some(LlmConfig {
            endpoint,
            api_key: get(ENV_API_KEY).filter(|s| !s.is_empty()),
            timeout_ms,
            model: get(ENV_MODEL).filter(|s| !s.is_empty()),
        }))
    }

    pub fn from_env() -> Result<Option<Self>, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }
}

/// OpenAI-style `chat/completions` client.
pub struct HttpChatTransport {
    client: reqwest::blocking::Client,
    config: LlmConfig,
}

impl HttpChatTransport {
    /// Must be built and dropped outside an async runtime.
    pub fn new(config: LlmConfig) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| TransportError::Failed(e.to_string()))?;
        Ok(HttpChatTransport { client, config })
    }
}

pub fn completion_body(request: &ChatRequest, model: Option<&str>) -> Value {
    let mut body = json!({ "messages": request.messages });
    if let Some(m) = model {
        body["model"] = json!(m);
    }
    body
}

/// Pulls the reply text out of a completion response.
pub fn completion_text(body: &Value) -> Result<String, TransportError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::Malformed("no choices[0].message.content".into()))
}

impl ChatTransport for HttpChatTransport {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = completion_body(request, self.config.model.as_deref());
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout(self.config.timeout_ms)
            } else {
                TransportError::Failed(e.to_string())
            }
        };
        let resp = req.send().map_err(map_err)?;
        let status = resp.status();
        let text = resp.text().map_err(map_err)?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(TransportError::Failed(format!("endpoint returned {status}: {snippet}")));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))?;
        completion_text(&value)
    }
}

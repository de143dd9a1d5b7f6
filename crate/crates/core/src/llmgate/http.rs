//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatReply, ChatRequest, LlmError};
use crate::throttle::{Backoff, InFlight};

pub const LLM_API_BASE_ENV: &str = "LLM_API_BASE";
pub const LLM_API_KEY_ENV: &str = "LLM_API_KEY";
pub const LLM_MODEL_ENV: &str = "LLM_MODEL";

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub backoff: Backoff,
}

impl OpenAiConfig {
    pub fn new(api_base: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key,
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
            backoff: Backoff::default(),
        }
    }
}

pub struct OpenAiChat {
    config: OpenAiConfig,
    agent: ureq::Agent,
    gate: InFlight,
}

impl OpenAiChat {
    pub fn new(config: OpenAiConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InFlight::new(config.max_in_flight);
        Self { config, agent, gate }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.api_base.trim_end_matches('/'))
    }

    fn body(req: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(s) = &req.system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": req.user}));
        json!({
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn call_once(&self, url: &str, body: &Value) -> Result<String, LlmError> {
        let _permit = self.gate.acquire();
        let mut r = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(k) = &self.config.api_key {
            r = r.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = r
            .send(body.to_string())
            .map_err(|e| LlmError::BackendUnavailable(format!("POST {url}: {e}")))?;
        let status = resp.status().as_u16();
        match status {
            200 => {
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| LlmError::BackendUnavailable(format!("POST {url}: {e}")))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| {
                    LlmError::BackendUnavailable(format!("unexpected completion payload: {e}"))
                })?;
                Ok(v.pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string())
            }
            429 => Err(LlmError::RateLimited {
                retry_after: resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs),
            }),
            _ => Err(LlmError::BackendUnavailable(format!("POST {url}: HTTP {status}"))),
        }
    }
}

impl ChatBackend for OpenAiChat {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, LlmError> {
        req.validate()?;
        let url = self.endpoint();
        let body = Self::body(req);
        let text = self.config.backoff.run(
            || self.call_once(&url, &body),
            |e| match e {
                LlmError::RateLimited { retry_after } => Some(*retry_after),
                LlmError::BackendUnavailable(m) if m.contains("HTTP 5") => Some(None),
                _ => None,
            },
        )?;
        Ok(ChatReply {
            text,
            cache_hit: false,
        })
    }
}

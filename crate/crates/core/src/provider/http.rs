//! OpenAI-style chat completions over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ProviderConfig, ProviderError, RawCompletion};
use crate::prompt::ChatPrompt;

pub struct HttpBackend {
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: &ProviderConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.request_timeout_secs.max(1)))
            .build();
        Self { agent }
    }

    fn request_body(cfg: &ProviderConfig, prompt: &ChatPrompt) -> Value {
        let messages: Vec<Value> = prompt
            .messages()
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        json!({
            "model": cfg.model_id,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
        })
    }
}

fn parse_retry_after(value: Option<&str>) -> Option<Duration> {
    value?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn map_status(status: u16, retry_after: Option<Duration>, body: String) -> ProviderError {
    match status {
        401 | 403 => ProviderError::Auth {
            status,
            message: body,
        },
        429 => ProviderError::RateLimited { retry_after },
        408 => ProviderError::Timeout,
        500..=599 => ProviderError::Transient(format!("HTTP {status}: {body}")),
        _ => ProviderError::Http { status, body },
    }
}

pub(crate) fn parse_completion(raw: &str) -> Result<RawCompletion, ProviderError> {
    let malformed = |message: &str| ProviderError::Malformed {
        message: message.to_string(),
        raw: raw.to_string(),
    };
    let value: Value =
        serde_json::from_str(raw).map_err(|e| malformed(&format!("invalid JSON: {e}")))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing choices[0].message.content"))?;
    let usage = |key: &str| {
        value
            .get("usage")
            .and_then(|u| u.get(key))
            .and_then(Value::as_u64)
    };
    Ok(RawCompletion {
        text: text.to_string(),
        prompt_tokens: usage("prompt_tokens"),
        completion_tokens: usage("completion_tokens"),
        total_tokens: usage("total_tokens"),
        latency: None,
    })
}

impl ChatBackend for HttpBackend {
    fn send(
        &self,
        cfg: &ProviderConfig,
        prompt: &ChatPrompt,
    ) -> Result<RawCompletion, ProviderError> {
        let mut request = self
            .agent
            .post(&cfg.endpoint)
            .set("Content-Type", "application/json");
        if !cfg.api_key_env.is_empty() {
            let key = std::env::var(&cfg.api_key_env)
                .ok()
                .filter(|k| !k.trim().is_empty())
                .ok_or_else(|| ProviderError::MissingCredentials(cfg.api_key_env.clone()))?;
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(Self::request_body(cfg, prompt)) {
            Ok(response) => {
                let body = response
                    .into_string()
                    .map_err(|e| ProviderError::Transient(format!("reading response body: {e}")))?;
                parse_completion(&body)
            }
            Err(ureq::Error::Status(status, response)) => {
                let retry_after = parse_retry_after(response.header("Retry-After"));
                let body = response.into_string().unwrap_or_default();
                Err(map_status(status, retry_after, body))
            }
            Err(ureq::Error::Transport(t)) => {
                let message = t.to_string();
                if message.contains("timed out") || message.contains("Timeout") {
                    Err(ProviderError::Timeout)
                } else {
                    Err(ProviderError::Transient(message))
                }
            }
        }
    }
}

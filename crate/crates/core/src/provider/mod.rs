//! Dispatching chat prompts to LLM backends.
//!
//! A [`Client`] wraps one [`ChatBackend`] with the retry policy, the
//! requests-per-minute limiter and local token counting for backends that do
//! not report usage. [`Client::complete_batch`] fans prompts out over at most
//! `max_in_flight` worker threads and returns results in input order.

mod http;
mod mock;
mod tokens;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::ChatPrompt;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockFailure, MockRecord};
pub use tokens::{count_tokens, ApproxTokenCounter, TokenCounter};

pub const MOCK_PROVIDER: &str = "mock";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("credential variable {0} is not set")]
    MissingCredentials(String),
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("rate limited by provider")]
    RateLimited { retry_after: Option<Duration> },
    #[error("request timed out")]
    Timeout,
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {message}")]
    Malformed { message: String, raw: String },
    #[error("mock provider has no fixture for passage {0}")]
    NoFixture(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<ProviderError>,
    },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::RateLimited { .. }
                | ProviderError::Timeout
                | ProviderError::Transient(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, the first one included.
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `next_attempt` (2-based: the first retry).
    pub fn delay_before(&self, next_attempt: u32) -> Duration {
        let exp = next_attempt.saturating_sub(2).min(30);
        let ms = self.backoff_base_ms.saturating_mul(1u64 << exp);
        Duration::from_millis(ms.min(self.backoff_max_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MockSettings {
    /// JSON-lines fixture; relative paths resolve against the config file.
    pub fixture: Option<PathBuf>,
    /// Sleep for each record's scripted latency instead of only reporting it.
    pub simulate_latency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub provider_name: String,
    pub model_id: String,
    pub endpoint: String,
    /// Name of the environment variable holding the API key. Empty means the
    /// endpoint needs no credentials.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: u64,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Zero disables the limiter.
    pub requests_per_minute: u32,
    pub mock: MockSettings,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            provider_name: "openai".into(),
            model_id: "gpt-4-0125-preview".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.2,
            max_output_tokens: 512,
            request_timeout_secs: 60,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            requests_per_minute: 0,
            mock: MockSettings::default(),
        }
    }
}

impl ProviderConfig {
    pub fn mock(model_id: impl Into<String>) -> Self {
        Self {
            provider_name: MOCK_PROVIDER.into(),
            model_id: model_id.into(),
            endpoint: String::new(),
            api_key_env: String::new(),
            retry: RetryPolicy {
                backoff_base_ms: 0,
                ..RetryPolicy::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::InvalidConfig(m.to_string()));
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1");
        }
        if self.provider_name.trim().is_empty() || self.model_id.trim().is_empty() {
            return bad("provider_name and model_id are required");
        }
        if self.provider_name != MOCK_PROVIDER && self.endpoint.trim().is_empty() {
            return bad("endpoint is required for remote providers");
        }
        Ok(())
    }

    /// Loads a TOML provider config, resolving the mock fixture path against
    /// the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut cfg: ProviderConfig = toml::from_str(&source)
            .map_err(|e| ProviderError::InvalidConfig(format!("{}: {e}", path.display())))?;
        if let (Some(fixture), Some(dir)) = (cfg.mock.fixture.as_mut(), path.parent()) {
            if fixture.is_relative() {
                *fixture = dir.join(&*fixture);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_key(&self) -> (String, String) {
        (self.provider_name.clone(), self.model_id.clone())
    }
}

/// What a backend hands back for one successful call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawCompletion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
    /// Backend-determined latency; measured wall time is used when absent.
    pub latency: Option<Duration>,
}

pub trait ChatBackend: Send + Sync {
    fn send(
        &self,
        cfg: &ProviderConfig,
        prompt: &ChatPrompt,
    ) -> Result<RawCompletion, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageSource {
    Reported,
    Counted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub passage_id: String,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Provider-reported total, kept even when it disagrees with the parts.
    pub total_tokens: Option<u64>,
    pub usage_source: UsageSource,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub provider_name: String,
    pub model_id: String,
    pub attempt_count: u32,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(requests_per_minute: u32) -> Self {
        Self {
            interval: (requests_per_minute > 0)
                .then(|| Duration::from_secs(60) / requests_per_minute),
            next_slot: Mutex::new(None),
        }
    }

    fn acquire(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let wait = {
            let mut next = self.next_slot.lock().expect("limiter lock");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub struct Client {
    cfg: ProviderConfig,
    backend: Arc<dyn ChatBackend>,
    counter: Arc<dyn TokenCounter>,
    limiter: RateLimiter,
}

impl Client {
    /// Picks the mock backend for `provider_name = "mock"`, HTTP otherwise.
    pub fn from_config(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let backend: Arc<dyn ChatBackend> = if cfg.provider_name == MOCK_PROVIDER {
            let path = cfg.mock.fixture.as_ref().ok_or_else(|| {
                ProviderError::InvalidConfig("mock provider needs mock.fixture".into())
            })?;
            let mut backend = MockBackend::from_file(path)?;
            backend.set_simulate_latency(cfg.mock.simulate_latency);
            Arc::new(backend)
        } else {
            Arc::new(HttpBackend::new(&cfg))
        };
        Ok(Self::with_backend(cfg, backend))
    }

    pub fn with_backend(cfg: ProviderConfig, backend: Arc<dyn ChatBackend>) -> Self {
        let limiter = RateLimiter::new(cfg.requests_per_minute);
        Self {
            cfg,
            backend,
            counter: Arc::new(ApproxTokenCounter::default()),
            limiter,
        }
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn count_prompt_tokens(&self, prompt: &ChatPrompt) -> u64 {
        prompt
            .messages()
            .iter()
            .map(|m| self.counter.count(&m.content) as u64)
            .sum()
    }

    /// One prompt, retried on transient failures per the retry policy.
    pub fn complete(&self, prompt: &ChatPrompt) -> Result<CompletionResult, ProviderError> {
        let policy = &self.cfg.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.acquire();
            let started = Instant::now();
            match self.backend.send(&self.cfg, prompt) {
                Ok(raw) => {
                    let elapsed = started.elapsed();
                    return Ok(self.finish(prompt, raw, elapsed, attempt));
                }
                Err(err) if err.is_retryable() && attempt < policy.max_attempts => {
                    let mut delay = policy.delay_before(attempt + 1);
                    if let ProviderError::RateLimited {
                        retry_after: Some(after),
                    } = &err
                    {
                        delay = delay.max(*after);
                    }
                    log::debug!(
                        "passage {}: attempt {attempt} failed ({err}); retrying",
                        prompt.passage_id()
                    );
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(err) if err.is_retryable() => {
                    return Err(ProviderError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(err),
                    })
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn finish(
        &self,
        prompt: &ChatPrompt,
        raw: RawCompletion,
        elapsed: Duration,
        attempts: u32,
    ) -> CompletionResult {
        let reported = raw.prompt_tokens.is_some() && raw.completion_tokens.is_some();
        let prompt_tokens = raw
            .prompt_tokens
            .unwrap_or_else(|| self.count_prompt_tokens(prompt));
        let completion_tokens = raw
            .completion_tokens
            .unwrap_or_else(|| self.counter.count(&raw.text) as u64);
        CompletionResult {
            passage_id: prompt.passage_id().to_string(),
            text: raw.text,
            prompt_tokens,
            completion_tokens,
            total_tokens: raw.total_tokens,
            usage_source: if reported {
                UsageSource::Reported
            } else {
                UsageSource::Counted
            },
            latency: raw.latency.unwrap_or(elapsed),
            provider_name: self.cfg.provider_name.clone(),
            model_id: self.cfg.model_id.clone(),
            attempt_count: attempts,
        }
    }

    /// Runs every prompt with at most `max_in_flight` outstanding requests.
    /// Failures are returned per item; output order equals input order.
    pub fn complete_batch(
        &self,
        prompts: &[ChatPrompt],
    ) -> Vec<Result<CompletionResult, ProviderError>> {
        let workers = self.cfg.max_in_flight.min(prompts.len());
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<CompletionResult, ProviderError>>>> =
            Mutex::new((0..prompts.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    let Some(prompt) = prompts.get(idx) else {
                        break;
                    };
                    let result = self.complete(prompt);
                    slots.lock().expect("result slots")[idx] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("result slots")
            .into_iter()
            .map(|r| r.expect("every index is claimed by a worker"))
            .collect()
    }
}

/// Convenience wrapper: build a client for `cfg` and complete one prompt.
pub fn complete(
    cfg: &ProviderConfig,
    prompt: &ChatPrompt,
) -> Result<CompletionResult, ProviderError> {
    Client::from_config(cfg.clone())?.complete(prompt)
}

pub fn complete_batch(
    cfg: &ProviderConfig,
    prompts: &[ChatPrompt],
) -> Result<Vec<Result<CompletionResult, ProviderError>>, ProviderError> {
    Ok(Client::from_config(cfg.clone())?.complete_batch(prompts))
}

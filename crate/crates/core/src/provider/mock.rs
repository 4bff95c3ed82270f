//! Offline backend answering from a fixture table.
//!
//! Fixture files are JSON lines, one record per line (blank lines and lines
//! starting with `#` are ignored):
//!
//! ```text
//! {"passage_id": "dpa:s:1a2b3c4d5e6f", "response": "RULES: 5\nJUSTIFICATION: ..."}
//! {"passage_id": "dpa:s:1a2b3c4d5e6f", "variant": "paragraph_level", "response": "...", "latency_ms": 700}
//! {"keywords": ["buildings", "access profiles"], "response": "...", "failures": ["rate_limit"]}
//! {"keywords": [], "response": "RULES: 99\nJUSTIFICATION: catch-all"}
//! ```
//!
//! Lookup order: a record with the prompt's passage id and variant, then one
//! with the passage id and no variant, then the first keyword record (in file
//! order) whose keywords all occur in the user message, case-insensitively.
//! An empty keyword list matches everything. `failures` are replayed in
//! order, one per call for each (record, passage) pair, before the response
//! is returned.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ProviderConfig, ProviderError, RawCompletion};
use crate::prompt::{ChatPrompt, TemplateVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    RateLimit,
    Timeout,
    Transient,
    Auth,
    Malformed,
}

impl MockFailure {
    fn to_error(self) -> ProviderError {
        match self {
            MockFailure::RateLimit => ProviderError::RateLimited { retry_after: None },
            MockFailure::Timeout => ProviderError::Timeout,
            MockFailure::Transient => ProviderError::Transient("scripted failure".into()),
            MockFailure::Auth => ProviderError::Auth {
                status: 401,
                message: "scripted authentication failure".into(),
            },
            MockFailure::Malformed => ProviderError::Malformed {
                message: "scripted malformed payload".into(),
                raw: "{".into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<TemplateVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
    pub response: String,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<MockFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tokens: Option<u64>,
}

impl MockRecord {
    pub fn for_passage(passage_id: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            passage_id: Some(passage_id.into()),
            variant: None,
            keywords: None,
            response: response.into(),
            latency_ms: 0,
            failures: Vec::new(),
            prompt_tokens: None,
            completion_tokens: None,
            total_tokens: None,
        }
    }

    pub fn for_keywords(keywords: &[&str], response: impl Into<String>) -> Self {
        Self {
            passage_id: None,
            keywords: Some(keywords.iter().map(|k| k.to_string()).collect()),
            ..Self::for_passage("", response)
        }
    }

    pub fn variant(mut self, variant: TemplateVariant) -> Self {
        self.variant = Some(variant);
        self
    }

    pub fn latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn failures(mut self, failures: impl IntoIterator<Item = MockFailure>) -> Self {
        self.failures = failures.into_iter().collect();
        self
    }

    pub fn usage(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = Some(prompt);
        self.completion_tokens = Some(completion);
        self
    }

    fn variant_matches(&self, variant: TemplateVariant) -> bool {
        self.variant.is_none_or(|v| v == variant)
    }
}

pub struct MockBackend {
    records: Vec<MockRecord>,
    simulate_latency: bool,
    attempts: Mutex<HashMap<(usize, String), usize>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(records: Vec<MockRecord>) -> Self {
        Self {
            records,
            simulate_latency: false,
            attempts: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn parse(source: &str) -> Result<Self, ProviderError> {
        let mut records = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let record: MockRecord = serde_json::from_str(line).map_err(|e| {
                ProviderError::InvalidConfig(format!("mock fixture line {}: {e}", idx + 1))
            })?;
            if record.passage_id.is_none() && record.keywords.is_none() {
                return Err(ProviderError::InvalidConfig(format!(
                    "mock fixture line {}: a record needs passage_id or keywords",
                    idx + 1
                )));
            }
            records.push(record);
        }
        Ok(Self::new(records))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::InvalidConfig(format!("mock fixture {}: {e}", path.display()))
        })?;
        Self::parse(&source)
    }

    pub fn set_simulate_latency(&mut self, on: bool) {
        self.simulate_latency = on;
    }

    pub fn with_simulated_latency(mut self) -> Self {
        self.simulate_latency = true;
        self
    }

    /// Highest number of overlapping `send` calls seen so far.
    pub fn max_observed_concurrency(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, prompt: &ChatPrompt) -> Option<usize> {
        let meta = prompt.metadata();
        let pid = meta.passage_id.as_str();
        let by_id = |want_variant: bool| {
            self.records.iter().position(|r| {
                r.passage_id.as_deref() == Some(pid)
                    && if want_variant {
                        r.variant == Some(meta.variant)
                    } else {
                        r.variant.is_none()
                    }
            })
        };
        by_id(true).or_else(|| by_id(false)).or_else(|| {
            let user = prompt.user().to_lowercase();
            self.records.iter().position(|r| {
                r.passage_id.is_none()
                    && r.variant_matches(meta.variant)
                    && r.keywords
                        .as_ref()
                        .is_some_and(|kws| kws.iter().all(|k| user.contains(&k.to_lowercase())))
            })
        })
    }

    fn respond(&self, prompt: &ChatPrompt) -> Result<RawCompletion, ProviderError> {
        let pid = prompt.passage_id();
        let idx = self
            .lookup(prompt)
            .ok_or_else(|| ProviderError::NoFixture(pid.to_string()))?;
        let record = &self.records[idx];
        let attempt = {
            let mut attempts = self.attempts.lock().expect("mock attempts");
            let n = attempts.entry((idx, pid.to_string())).or_insert(0);
            *n += 1;
            *n
        };
        if let Some(failure) = record.failures.get(attempt - 1) {
            return Err(failure.to_error());
        }
        let latency = Duration::from_millis(record.latency_ms);
        if self.simulate_latency && !latency.is_zero() {
            std::thread::sleep(latency);
        }
        Ok(RawCompletion {
            text: record.response.clone(),
            prompt_tokens: record.prompt_tokens,
            completion_tokens: record.completion_tokens,
            total_tokens: record.total_tokens,
            latency: Some(latency),
        })
    }
}

impl ChatBackend for MockBackend {
    fn send(
        &self,
        _cfg: &ProviderConfig,
        prompt: &ChatPrompt,
    ) -> Result<RawCompletion, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let result = self.respond(prompt);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

//! Token, latency and cost bookkeeping.
//!
//! # Rate files
//!
//! Prices are never compiled in. A rate file is TOML:
//!
//! ```toml
//! schema_version = 1
//! effective_date = "2024-01-25"
//! currency = "USD"
//!
//! [[rate]]
//! provider_name = "openai"
//! model_id = "gpt-3.5-turbo-0125"
//! input_per_1k = "0.0010"
//! output_per_1k = "0.0020"
//! ```
//!
//! Rates are decimal strings so that exact arithmetic sees the literal value.
//!
//! # Ledger files
//!
//! A ledger is CSV with a header row and one row per completed request, in
//! the column order of [`UsageRecord`].

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{CompletionResult, UsageSource};
use crate::scalar::{format_fixed, Scalar};

pub const RATE_SCHEMA_VERSION: u32 = 1;

/// Decimal places used when reporting currency amounts.
pub const COST_PLACES: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AccountingError {
    #[error("failed to access {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid rate table: {0}")]
    InvalidRates(String),
    #[error("no rate entry for {provider_name}/{model_id}")]
    MissingRate {
        provider_name: String,
        model_id: String,
    },
    #[error("invalid ledger: {0}")]
    InvalidLedger(String),
    #[error("the usage ledger is empty")]
    EmptyLedger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateEntry {
    pub provider_name: String,
    pub model_id: String,
    /// Currency units per 1000 prompt tokens, as a decimal literal.
    pub input_per_1k: String,
    /// Currency units per 1000 completion tokens, as a decimal literal.
    pub output_per_1k: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateTable {
    pub schema_version: u32,
    pub effective_date: String,
    #[serde(default = "default_currency")]
    pub currency: String,
    #[serde(default, rename = "rate")]
    pub entries: Vec<RateEntry>,
}

fn default_currency() -> String {
    "USD".into()
}

impl RateTable {
    pub fn parse(source: &str) -> Result<Self, AccountingError> {
        let table: RateTable =
            toml::from_str(source).map_err(|e| AccountingError::InvalidRates(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, AccountingError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|e| AccountingError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&source)
    }

    pub fn validate(&self) -> Result<(), AccountingError> {
        let bad = |m: String| Err(AccountingError::InvalidRates(m));
        if self.schema_version != RATE_SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {}",
                self.schema_version
            ));
        }
        if self.effective_date.trim().is_empty() {
            return bad("effective_date is required".into());
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            for (field, v) in [
                ("input_per_1k", &e.input_per_1k),
                ("output_per_1k", &e.output_per_1k),
            ] {
                match num_rational::Ratio::<i64>::parse_decimal(v) {
                    Some(r) if r >= num_rational::Ratio::from_integer(0) => {}
                    Some(_) => {
                        return bad(format!(
                            "{}/{}: {field} is negative",
                            e.provider_name, e.model_id
                        ))
                    }
                    None => {
                        return bad(format!(
                            "{}/{}: {field} {v:?} is not a decimal",
                            e.provider_name, e.model_id
                        ))
                    }
                }
            }
            if !seen.insert((&e.provider_name, &e.model_id)) {
                return bad(format!(
                    "duplicate entry for {}/{}",
                    e.provider_name, e.model_id
                ));
            }
        }
        Ok(())
    }

    pub fn entry(&self, provider_name: &str, model_id: &str) -> Option<&RateEntry> {
        self.entries
            .iter()
            .find(|e| e.provider_name == provider_name && e.model_id == model_id)
    }

    /// `(input, output)` rates per 1000 tokens for a model.
    pub fn rates<T: Scalar>(
        &self,
        provider_name: &str,
        model_id: &str,
    ) -> Result<(T, T), AccountingError> {
        let e =
            self.entry(provider_name, model_id)
                .ok_or_else(|| AccountingError::MissingRate {
                    provider_name: provider_name.into(),
                    model_id: model_id.into(),
                })?;
        let parse = |s: &str| {
            T::parse_decimal(s)
                .ok_or_else(|| AccountingError::InvalidRates(format!("bad rate {s:?}")))
        };
        Ok((parse(&e.input_per_1k)?, parse(&e.output_per_1k)?))
    }
}

/// One completed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub passage_id: String,
    pub granularity: String,
    pub provider_name: String,
    pub model_id: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Total reported by the provider, if any.
    pub reported_total_tokens: Option<u64>,
    /// `reported_total_tokens - (prompt_tokens + completion_tokens)`; zero
    /// when no total was reported.
    pub protocol_overhead_tokens: i64,
    pub latency_ms: u64,
    pub usage_source: UsageSource,
    pub attempt_count: u32,
}

impl UsageRecord {
    pub fn from_completion(c: &CompletionResult, granularity: impl Into<String>) -> Self {
        let parts = c.prompt_tokens + c.completion_tokens;
        Self {
            passage_id: c.passage_id.clone(),
            granularity: granularity.into(),
            provider_name: c.provider_name.clone(),
            model_id: c.model_id.clone(),
            prompt_tokens: c.prompt_tokens,
            completion_tokens: c.completion_tokens,
            reported_total_tokens: c.total_tokens,
            protocol_overhead_tokens: c.total_tokens.map_or(0, |t| t as i64 - parts as i64),
            latency_ms: c.latency.as_millis() as u64,
            usage_source: c.usage_source,
            attempt_count: c.attempt_count,
        }
    }

    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.latency_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub records: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Sum of provider-reported totals where they exist, otherwise of parts.
    pub total_tokens: u64,
    pub protocol_overhead_tokens: i64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageLedger {
    records: Vec<UsageRecord>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<UsageRecord>) -> Self {
        Self { records }
    }

    pub fn push(&mut self, record: UsageRecord) {
        self.records.push(record);
    }

    pub fn extend(&mut self, other: UsageLedger) {
        self.records.extend(other.records);
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn totals(&self) -> LedgerTotals {
        self.records
            .iter()
            .fold(LedgerTotals::default(), |mut t, r| {
                t.records += 1;
                t.prompt_tokens += r.prompt_tokens;
                t.completion_tokens += r.completion_tokens;
                t.total_tokens += r
                    .reported_total_tokens
                    .unwrap_or(r.prompt_tokens + r.completion_tokens);
                t.protocol_overhead_tokens += r.protocol_overhead_tokens;
                t.latency_ms += r.latency_ms;
                t
            })
    }

    /// Sub-ledgers keyed by `(provider_name, model_id)`.
    pub fn by_model(&self) -> BTreeMap<(String, String), UsageLedger> {
        let mut out: BTreeMap<(String, String), UsageLedger> = BTreeMap::new();
        for r in &self.records {
            out.entry((r.provider_name.clone(), r.model_id.clone()))
                .or_default()
                .push(r.clone());
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), AccountingError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| AccountingError::InvalidLedger(e.to_string()))?;
        }
        w.flush()
            .map_err(|e| AccountingError::InvalidLedger(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, AccountingError> {
        let mut r = csv::Reader::from_reader(reader);
        let records = r
            .deserialize()
            .collect::<Result<Vec<UsageRecord>, _>>()
            .map_err(|e| AccountingError::InvalidLedger(e.to_string()))?;
        Ok(Self { records })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, AccountingError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| AccountingError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::read_csv(file)
    }
}

/// Ledger shared by concurrent producers; appends take a lock, reads clone a
/// consistent snapshot.
#[derive(Debug, Default)]
pub struct SharedLedger {
    inner: Mutex<UsageLedger>,
}

impl SharedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, record: UsageRecord) {
        self.inner.lock().expect("ledger lock").push(record);
    }

    pub fn snapshot(&self) -> UsageLedger {
        self.inner.lock().expect("ledger lock").clone()
    }

    pub fn into_inner(self) -> UsageLedger {
        self.inner.into_inner().expect("ledger lock")
    }
}

/// Prices every record in `ledger` at the rates of one model.
pub fn estimate_cost<T: Scalar>(
    ledger: &UsageLedger,
    rates: &RateTable,
    provider_name: &str,
    model_id: &str,
) -> Result<T, AccountingError> {
    let (input, output) = rates.rates::<T>(provider_name, model_id)?;
    let thousand = T::from_count(1000);
    let totals = ledger.totals();
    Ok(
        T::from_count(totals.prompt_tokens) * input / thousand.clone()
            + T::from_count(totals.completion_tokens) * output / thousand,
    )
}

/// Formats a currency amount to [`COST_PLACES`] decimals.
pub fn format_cost<T: Scalar>(amount: &T) -> String {
    format_fixed(amount, COST_PLACES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost<T> {
    pub provider_name: String,
    pub model_id: String,
    pub totals: LedgerTotals,
    pub cost: T,
}

/// Prices each model's records at that model's own rates.
pub fn cost_by_model<T: Scalar>(
    ledger: &UsageLedger,
    rates: &RateTable,
) -> Result<Vec<ModelCost<T>>, AccountingError> {
    ledger
        .by_model()
        .into_iter()
        .map(|((provider_name, model_id), sub)| {
            let cost = estimate_cost(&sub, rates, &provider_name, &model_id)?;
            Ok(ModelCost {
                totals: sub.totals(),
                provider_name,
                model_id,
                cost,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput<T> {
    pub passages: usize,
    pub mean_latency_secs: T,
    /// `3600 / mean_latency_secs`; absent when the mean latency is zero.
    pub passages_per_hour: Option<T>,
}

impl<T: Scalar> Throughput<T> {
    /// Whole passages per hour, rounded down.
    pub fn whole_passages_per_hour(&self) -> Option<u64> {
        let v = self.passages_per_hour.as_ref()?.to_f64_lossy().floor();
        (v.is_finite() && v >= 0.0).then_some(v as u64)
    }
}

pub fn throughput_report<T: Scalar>(
    ledger: &UsageLedger,
) -> Result<Throughput<T>, AccountingError> {
    if ledger.is_empty() {
        return Err(AccountingError::EmptyLedger);
    }
    let n = ledger.len() as u64;
    let mean = T::ratio(ledger.totals().latency_ms, n * 1000);
    let per_hour = (mean != T::zero()).then(|| T::from_count(3600) / mean.clone());
    Ok(Throughput {
        passages: ledger.len(),
        mean_latency_secs: mean,
        passages_per_hour: per_hour,
    })
}

//! Checking regulatory documents against a catalog of compliance rules with
//! chat-completion models.
//!
//! The pipeline chunks a document into paragraphs and sentences
//! ([`corpus`]), builds one chat prompt per passage from a template and the
//! rule catalog ([`rules`], [`prompt`]), sends the prompts to a provider
//! ([`provider`]), parses each answer into a [`Verdict`] ([`verdict`]) and
//! assembles a document report ([`report`]). [`evaluation`] scores verdicts
//! against gold labels and [`accounting`] prices token usage.
//!
//! Scoring and cost arithmetic are generic over [`Scalar`]; the aliases below
//! fix the usual instantiations.

pub mod accounting;
pub mod corpus;
pub mod evaluation;
pub mod pipeline;
pub mod prompt;
pub mod provider;
pub mod report;
pub mod rules;
pub mod scalar;
pub mod verdict;

pub use num_rational::Rational64;

pub use corpus::{
    chunk_document, ChunkConfig, ChunkedDocument, Granularity, Passage, RegulatoryArtifact, Span,
};
pub use prompt::{build_prompt, ChatPrompt, PromptTemplate, TemplateVariant};
pub use provider::{Client, CompletionResult, ProviderConfig, ProviderError};
pub use report::{assemble_report, render_report, ComplianceReport, ReportFormat};
pub use rules::{ComplianceRule, RuleCatalog, RuleId, SENTINEL_ID};
pub use scalar::Scalar;
pub use verdict::{parse_response, ParseStatus, Verdict};

/// Metrics in double precision.
pub type Metrics = evaluation::MetricsSummary<f64>;
/// Metrics in single precision.
pub type Metrics32 = evaluation::MetricsSummary<f32>;
/// Metrics computed exactly.
pub type ExactMetrics = evaluation::MetricsSummary<Rational64>;
pub type Ablation = evaluation::AblationComparison<f64>;
pub type ExactAblation = evaluation::AblationComparison<Rational64>;
pub type Throughput = accounting::Throughput<f64>;
pub type ExactThroughput = accounting::Throughput<Rational64>;

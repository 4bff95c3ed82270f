//! End-to-end checking of one document: chunk, prompt, complete, parse and
//! assemble the report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{RateTable, UsageLedger, UsageRecord};
use crate::corpus::{
    chunk_document, enforce_token_limit, ChunkConfig, ChunkedDocument, CorpusError, Granularity,
    Passage, RegulatoryArtifact,
};
use crate::prompt::{build_prompt, ChatPrompt, PromptError, PromptTemplate, TemplateVariant};
use crate::provider::{ApproxTokenCounter, Client};
use crate::report::{
    assemble_report, ComplianceReport, PassageFailure, ReportError, RunMetadata, UsageSummary,
};
use crate::rules::RuleCatalog;
use crate::verdict::{parse_response, Verdict};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("template {template} is {actual} but the run needs {expected}")]
    TemplateMismatch {
        template: String,
        expected: &'static str,
        actual: &'static str,
    },
}

/// Which runs a check performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunGranularity {
    Sentence,
    Paragraph,
    Both,
}

/// One run over a document: the template variant and what is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub variant: TemplateVariant,
    pub target: Granularity,
}

impl RunPlan {
    pub const SENTENCE: RunPlan = RunPlan {
        variant: TemplateVariant::SentenceLevel,
        target: Granularity::Sentence,
    };

    /// `sentence` or `paragraph`, after the template variant.
    pub fn label(&self) -> &'static str {
        match self.variant {
            TemplateVariant::SentenceLevel => "sentence",
            TemplateVariant::ParagraphLevel => "paragraph",
        }
    }

    pub fn context_granularity(&self) -> Option<Granularity> {
        (self.variant == TemplateVariant::ParagraphLevel).then_some(Granularity::Paragraph)
    }
}

impl RunGranularity {
    /// Runs to perform. `paragraph_target` picks what the paragraph-level run
    /// checks; `None` means whole paragraphs for a paragraph-only check and
    /// sentences for `both`, so that both runs score the same passages.
    pub fn plans(self, paragraph_target: Option<Granularity>) -> Vec<RunPlan> {
        let paragraph = |default| RunPlan {
            variant: TemplateVariant::ParagraphLevel,
            target: paragraph_target.unwrap_or(default),
        };
        match self {
            RunGranularity::Sentence => vec![RunPlan::SENTENCE],
            RunGranularity::Paragraph => vec![paragraph(Granularity::Paragraph)],
            RunGranularity::Both => vec![RunPlan::SENTENCE, paragraph(Granularity::Sentence)],
        }
    }
}

/// Shared inputs of every run.
pub struct CheckContext<'a> {
    pub client: &'a Client,
    pub catalog: &'a RuleCatalog,
    pub sentence_template: &'a PromptTemplate,
    pub paragraph_template: &'a PromptTemplate,
    pub chunk: &'a ChunkConfig,
    pub rates: Option<&'a RateTable>,
    pub generated_at: String,
}

impl CheckContext<'_> {
    fn template(&self, variant: TemplateVariant) -> Result<&PromptTemplate, PipelineError> {
        let t = match variant {
            TemplateVariant::SentenceLevel => self.sentence_template,
            TemplateVariant::ParagraphLevel => self.paragraph_template,
        };
        if t.variant() != variant {
            return Err(PipelineError::TemplateMismatch {
                template: t.template_id().to_string(),
                expected: variant.as_str(),
                actual: t.variant().as_str(),
            });
        }
        Ok(t)
    }
}

#[derive(Debug, Clone)]
pub struct DocumentRun {
    pub plan: RunPlan,
    pub targets: Vec<Passage>,
    pub verdicts: Vec<Verdict>,
    pub failures: Vec<PassageFailure>,
    pub ledger: UsageLedger,
    pub report: ComplianceReport,
}

fn prepare(
    ctx: &CheckContext,
    chunked: &ChunkedDocument,
    template: &PromptTemplate,
    plan: RunPlan,
    target: &Passage,
) -> Result<ChatPrompt, String> {
    let counter = ApproxTokenCounter::default();
    let limited = enforce_token_limit(target, ctx.chunk, &counter).map_err(|e| e.to_string())?;
    let context = match plan.context_granularity() {
        None => None,
        Some(_) if target.granularity == Granularity::Paragraph => Some(limited.clone()),
        Some(_) => {
            let parent = chunked.parent_of(target).ok_or_else(|| {
                format!("sentence {} has no enclosing paragraph", target.passage_id)
            })?;
            let parent =
                enforce_token_limit(parent, ctx.chunk, &counter).map_err(|e| e.to_string())?;
            if !parent.span.contains(&limited.span) {
                return Err(format!(
                    "paragraph {} was truncated before sentence {}",
                    parent.passage_id, target.passage_id
                ));
            }
            Some(parent)
        }
    };
    build_prompt(template, ctx.catalog, &limited, context.as_ref()).map_err(|e| e.to_string())
}

/// Runs one plan over a chunked document.
pub fn run_document(
    ctx: &CheckContext,
    doc: &RegulatoryArtifact,
    chunked: &ChunkedDocument,
    plan: RunPlan,
) -> Result<DocumentRun, PipelineError> {
    let template = ctx.template(plan.variant)?;
    template.validate()?;
    let targets: Vec<Passage> = chunked.passages(plan.target).to_vec();

    let mut failures = Vec::new();
    let mut prompts = Vec::new();
    for t in &targets {
        match prepare(ctx, chunked, template, plan, t) {
            Ok(p) => prompts.push(p),
            Err(message) => failures.push(PassageFailure {
                passage_id: t.passage_id.clone(),
                message,
            }),
        }
    }

    let mut verdicts = Vec::new();
    let mut ledger = UsageLedger::new();
    for (prompt, result) in prompts.iter().zip(ctx.client.complete_batch(&prompts)) {
        match result {
            Ok(c) => {
                ledger.push(UsageRecord::from_completion(&c, plan.label()));
                verdicts.push(parse_response(&c.text, ctx.catalog, prompt.passage_id()));
            }
            Err(e) => {
                log::warn!("passage {}: {e}", prompt.passage_id());
                failures.push(PassageFailure {
                    passage_id: prompt.passage_id().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }

    let cfg = ctx.client.config();
    let run = RunMetadata {
        provider_name: cfg.provider_name.clone(),
        model_id: cfg.model_id.clone(),
        temperature: cfg.temperature,
        template_id: template.template_id().to_string(),
        template_variant: plan.variant,
        catalog_id: ctx.catalog.catalog_id().to_string(),
        target_granularity: plan.target,
        context_granularity: plan.context_granularity(),
        generated_at: ctx.generated_at.clone(),
    };
    let usage = UsageSummary::from_ledger(&ledger, ctx.rates)?;
    let report = assemble_report(doc, run, &targets, &verdicts, &failures, ctx.catalog, usage)?;
    Ok(DocumentRun {
        plan,
        targets,
        verdicts,
        failures,
        ledger,
        report,
    })
}

/// Chunks `doc` and performs every plan in order.
pub fn check_document(
    ctx: &CheckContext,
    doc: &RegulatoryArtifact,
    plans: &[RunPlan],
) -> Result<Vec<DocumentRun>, PipelineError> {
    let chunked = chunk_document(doc, ctx.chunk)?;
    plans
        .iter()
        .map(|&plan| run_document(ctx, doc, &chunked, plan))
        .collect()
}

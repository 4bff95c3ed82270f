//! Document-level compliance reports.
//!
//! A report lists one entry per checked passage, in document order, and a
//! rollup with one line per catalog rule. A rule is `satisfied_somewhere`
//! when at least one passage verdict contains it; its witnesses are those
//! passages. Rules that no passage satisfies are `never_satisfied` and are
//! the candidate completeness gaps of the document.
//!
//! The machine format is pretty-printed JSON; its layout is the serde form of
//! [`ComplianceReport`] and is versioned by [`REPORT_SCHEMA_VERSION`].
//! Parsing and re-rendering a machine report reproduces it byte for byte.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{
    estimate_cost, format_cost, throughput_report, AccountingError, LedgerTotals, RateTable,
    UsageLedger,
};
use crate::corpus::{Granularity, Passage, RegulatoryArtifact, Span};
use crate::prompt::TemplateVariant;
use crate::rules::{RuleCatalog, RuleId, SENTINEL_ID};
use crate::scalar::format_fixed;
use crate::verdict::{ParseStatus, Verdict};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("verdict references passage {0}, which is not part of the run")]
    UnknownPassage(String),
    #[error("passage {0} has more than one outcome")]
    DuplicateOutcome(String),
    #[error("verdict for passage {passage_id} lists rule {rule_id}, which is not in the catalog")]
    UnknownRule { passage_id: String, rule_id: RuleId },
    #[error("machine report is not valid: {0}")]
    Parse(String),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Machine,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub provider_name: String,
    pub model_id: String,
    pub temperature: f64,
    pub template_id: String,
    pub template_variant: TemplateVariant,
    pub catalog_id: String,
    /// Granularity of the passages that were checked.
    pub target_granularity: Granularity,
    /// Granularity of the surrounding context given to the model, if any.
    pub context_granularity: Option<Granularity>,
    pub generated_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Checked,
    ProviderError,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub passage_id: String,
    pub granularity: Granularity,
    pub ordinal: usize,
    /// Byte range in the normalized document text.
    pub span: Span,
    /// Byte range in the file as read.
    pub raw_span: Span,
    pub truncated: bool,
    pub text: String,
    pub context_passage_id: Option<String>,
    pub status: EntryStatus,
    pub satisfied_rule_ids: Vec<RuleId>,
    /// Model justification, verbatim.
    pub justification: String,
    pub parse_status: Option<ParseStatus>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollupStatus {
    SatisfiedSomewhere,
    NeverSatisfied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRollup {
    pub rule_id: RuleId,
    pub description: String,
    pub status: RollupStatus,
    pub witnesses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub passages: usize,
    pub checked: usize,
    pub provider_failures: usize,
    pub not_run: usize,
    pub parse_failures: usize,
    pub recovered_parses: usize,
    pub not_applicable: usize,
    pub rules_satisfied: usize,
    pub rules_never_satisfied: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLine {
    pub currency: String,
    pub amount: String,
    pub rates_effective_date: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct UsageSummary {
    pub totals: LedgerTotals,
    /// Mean latency in seconds, three decimals.
    pub mean_latency_secs: Option<String>,
    pub projected_passages_per_hour: Option<u64>,
    pub cost: Option<CostLine>,
}

impl UsageSummary {
    /// Summarizes a ledger; the cost line is filled when rates are given.
    pub fn from_ledger(
        ledger: &UsageLedger,
        rates: Option<&RateTable>,
    ) -> Result<Self, ReportError> {
        let mut summary = Self {
            totals: ledger.totals(),
            ..Self::default()
        };
        if let Ok(t) = throughput_report::<num_rational::Ratio<i64>>(ledger) {
            summary.mean_latency_secs = Some(format_fixed(&t.mean_latency_secs, 3));
            summary.projected_passages_per_hour = t.whole_passages_per_hour();
        }
        if let (Some(rates), Some(first)) = (rates, ledger.records().first()) {
            let amount: num_rational::Ratio<i64> =
                estimate_cost(ledger, rates, &first.provider_name, &first.model_id)?;
            summary.cost = Some(CostLine {
                currency: rates.currency.clone(),
                amount: format_cost(&amount),
                rates_effective_date: rates.effective_date.clone(),
            });
        }
        Ok(summary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub schema_version: u32,
    pub doc_id: String,
    pub doc_title: String,
    pub source_path: String,
    pub run: RunMetadata,
    /// True when some passage has no verdict because the provider failed or
    /// the run stopped early.
    pub incomplete: bool,
    pub summary: ReportSummary,
    pub rollup: Vec<RuleRollup>,
    pub entries: Vec<ReportEntry>,
    pub usage: UsageSummary,
}

/// A passage the provider could not answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageFailure {
    pub passage_id: String,
    pub message: String,
}

pub fn assemble_report(
    doc: &RegulatoryArtifact,
    run: RunMetadata,
    targets: &[Passage],
    verdicts: &[Verdict],
    failures: &[PassageFailure],
    catalog: &RuleCatalog,
    usage: UsageSummary,
) -> Result<ComplianceReport, ReportError> {
    let known: HashSet<&str> = targets.iter().map(|p| p.passage_id.as_str()).collect();
    let mut by_id: HashMap<&str, &Verdict> = HashMap::new();
    for v in verdicts {
        if !known.contains(v.passage_id.as_str()) {
            return Err(ReportError::UnknownPassage(v.passage_id.clone()));
        }
        if let Some(&id) = v
            .satisfied_rule_ids
            .iter()
            .find(|&&id| id != SENTINEL_ID && !catalog.contains(id))
        {
            return Err(ReportError::UnknownRule {
                passage_id: v.passage_id.clone(),
                rule_id: id,
            });
        }
        if by_id.insert(&v.passage_id, v).is_some() {
            return Err(ReportError::DuplicateOutcome(v.passage_id.clone()));
        }
    }
    let mut failed: HashMap<&str, &str> = HashMap::new();
    for f in failures {
        if !known.contains(f.passage_id.as_str()) {
            return Err(ReportError::UnknownPassage(f.passage_id.clone()));
        }
        if by_id.contains_key(f.passage_id.as_str())
            || failed.insert(&f.passage_id, &f.message).is_some()
        {
            return Err(ReportError::DuplicateOutcome(f.passage_id.clone()));
        }
    }

    let mut witnesses: BTreeMap<RuleId, Vec<String>> = BTreeMap::new();
    let mut entries = Vec::with_capacity(targets.len());
    for p in targets {
        let mut entry = ReportEntry {
            passage_id: p.passage_id.clone(),
            granularity: p.granularity,
            ordinal: p.ordinal,
            span: p.span,
            raw_span: doc.raw_span(p.span),
            truncated: p.truncated,
            text: p.text.clone(),
            context_passage_id: match run.context_granularity {
                Some(Granularity::Paragraph) if p.granularity == Granularity::Sentence => {
                    p.parent_paragraph_id.clone()
                }
                _ => None,
            },
            status: EntryStatus::NotRun,
            satisfied_rule_ids: Vec::new(),
            justification: String::new(),
            parse_status: None,
            warnings: Vec::new(),
            error: None,
        };
        if let Some(v) = by_id.get(p.passage_id.as_str()) {
            entry.status = EntryStatus::Checked;
            entry.satisfied_rule_ids = v.satisfied_rule_ids.iter().copied().collect();
            entry.justification = v.justification.clone();
            entry.parse_status = Some(v.parse_status);
            entry.warnings = v.warnings.clone();
            for id in v.real_rule_ids() {
                witnesses.entry(id).or_default().push(p.passage_id.clone());
            }
        } else if let Some(msg) = failed.get(p.passage_id.as_str()) {
            entry.status = EntryStatus::ProviderError;
            entry.error = Some(msg.to_string());
        }
        entries.push(entry);
    }

    let rollup: Vec<RuleRollup> = catalog
        .rules()
        .iter()
        .map(|rule| {
            let w = witnesses.remove(&rule.rule_id).unwrap_or_default();
            RuleRollup {
                rule_id: rule.rule_id,
                description: rule.description.clone(),
                status: if w.is_empty() {
                    RollupStatus::NeverSatisfied
                } else {
                    RollupStatus::SatisfiedSomewhere
                },
                witnesses: w,
            }
        })
        .collect();

    let count = |f: &dyn Fn(&ReportEntry) -> bool| entries.iter().filter(|e| f(e)).count();
    let rules_satisfied = rollup
        .iter()
        .filter(|r| r.status == RollupStatus::SatisfiedSomewhere)
        .count();
    let summary = ReportSummary {
        passages: entries.len(),
        checked: count(&|e| e.status == EntryStatus::Checked),
        provider_failures: count(&|e| e.status == EntryStatus::ProviderError),
        not_run: count(&|e| e.status == EntryStatus::NotRun),
        parse_failures: count(&|e| e.parse_status == Some(ParseStatus::Failed)),
        recovered_parses: count(&|e| e.parse_status == Some(ParseStatus::Recovered)),
        not_applicable: count(&|e| e.satisfied_rule_ids == [SENTINEL_ID]),
        rules_satisfied,
        rules_never_satisfied: rollup.len() - rules_satisfied,
    };
    Ok(ComplianceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        doc_id: doc.doc_id().to_string(),
        doc_title: doc.title().to_string(),
        source_path: doc.source_path().to_string(),
        run,
        incomplete: summary.checked < summary.passages,
        summary,
        rollup,
        entries,
        usage,
    })
}

pub fn render_report(report: &ComplianceReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Machine => render_machine(report).into_bytes(),
        ReportFormat::Human => render_human(report).into_bytes(),
    }
}

fn render_machine(report: &ComplianceReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn parse_machine_report(bytes: &[u8]) -> Result<ComplianceReport, ReportError> {
    let report: ComplianceReport =
        serde_json::from_slice(bytes).map_err(|e| ReportError::Parse(e.to_string()))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(ReportError::Parse(format!(
            "unsupported schema_version {}",
            report.schema_version
        )));
    }
    Ok(report)
}

fn heading(out: &mut String, title: &str) {
    let _ = writeln!(out, "\n{title}\n{}", "-".repeat(title.len()));
}

fn indent(text: &str, pad: &str) -> String {
    text.lines().collect::<Vec<_>>().join(&format!("\n{pad}"))
}

fn rule_list(ids: &[RuleId]) -> String {
    match ids {
        [] => "none".to_string(),
        [SENTINEL_ID] => format!("none applicable ({SENTINEL_ID})"),
        ids => ids
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn granularity_line(run: &RunMetadata) -> String {
    match run.context_granularity {
        Some(ctx) => format!("{} passages, {} context", run.target_granularity, ctx),
        None => format!("{} passages, no context", run.target_granularity),
    }
}

fn render_human(r: &ComplianceReport) -> String {
    let mut out = String::new();
    let title = format!("Compliance report: {}", r.doc_id);
    let _ = writeln!(out, "{title}\n{}", "=".repeat(title.len()));
    let _ = writeln!(out, "Title:       {}", r.doc_title);
    let _ = writeln!(out, "Source:      {}", r.source_path);
    let _ = writeln!(
        out,
        "Model:       {}/{} (temperature {})",
        r.run.provider_name, r.run.model_id, r.run.temperature
    );
    let _ = writeln!(
        out,
        "Template:    {} ({})",
        r.run.template_id,
        r.run.template_variant.as_str()
    );
    let _ = writeln!(
        out,
        "Catalog:     {} ({} rules)",
        r.run.catalog_id,
        r.rollup.len()
    );
    let _ = writeln!(out, "Granularity: {}", granularity_line(&r.run));
    let _ = writeln!(out, "Generated:   {}", r.run.generated_at);

    let s = &r.summary;
    heading(&mut out, "Summary");
    if r.incomplete {
        let _ = writeln!(
            out,
            "INCOMPLETE: {} of {} passages have no verdict.",
            s.passages - s.checked,
            s.passages
        );
    }
    let _ = writeln!(
        out,
        "Passages checked:        {} of {}",
        s.checked, s.passages
    );
    let _ = writeln!(out, "Provider failures:       {}", s.provider_failures);
    let _ = writeln!(out, "Not run:                 {}", s.not_run);
    let _ = writeln!(out, "Unparseable answers:     {}", s.parse_failures);
    let _ = writeln!(out, "Recovered answers:       {}", s.recovered_parses);
    let _ = writeln!(out, "No rule applicable:      {}", s.not_applicable);
    let _ = writeln!(
        out,
        "Rules satisfied:         {} of {}",
        s.rules_satisfied,
        r.rollup.len()
    );
    let _ = writeln!(out, "Rules never satisfied:   {}", s.rules_never_satisfied);

    heading(&mut out, "Rule rollup");
    for rule in &r.rollup {
        match rule.status {
            RollupStatus::SatisfiedSomewhere => {
                let _ = writeln!(
                    out,
                    "R{:<3} satisfied        {}",
                    rule.rule_id,
                    rule.witnesses.join(", ")
                );
            }
            RollupStatus::NeverSatisfied => {
                let _ = writeln!(
                    out,
                    "R{:<3} NEVER SATISFIED  {}",
                    rule.rule_id, rule.description
                );
            }
        }
    }

    heading(&mut out, "Findings");
    if r.entries.is_empty() {
        let _ = writeln!(out, "(no passages)");
    }
    for (i, e) in r.entries.iter().enumerate() {
        let _ = writeln!(
            out,
            "[{}] {} ({} {}, bytes {}..{}{})",
            i + 1,
            e.passage_id,
            e.granularity,
            e.ordinal,
            e.raw_span.start,
            e.raw_span.end,
            if e.truncated { ", truncated" } else { "" }
        );
        if let Some(ctx) = &e.context_passage_id {
            let _ = writeln!(out, "    Context:       {ctx}");
        }
        let _ = writeln!(
            out,
            "    Text:          {}",
            indent(&e.text, "                   ")
        );
        match e.status {
            EntryStatus::Checked => {
                let _ = writeln!(
                    out,
                    "    Rules:         {}",
                    rule_list(&e.satisfied_rule_ids)
                );
                let _ = writeln!(
                    out,
                    "    Parse:         {}",
                    e.parse_status.map_or("unknown", ParseStatus::as_str)
                );
                let _ = writeln!(
                    out,
                    "    Justification: {}",
                    indent(&e.justification, "                   ")
                );
                for w in &e.warnings {
                    let _ = writeln!(out, "    Warning:       {w}");
                }
            }
            EntryStatus::ProviderError => {
                let _ = writeln!(
                    out,
                    "    Error:         {}",
                    e.error.as_deref().unwrap_or("")
                );
            }
            EntryStatus::NotRun => {
                let _ = writeln!(out, "    Not run");
            }
        }
    }

    let u = &r.usage;
    heading(&mut out, "Usage");
    let _ = writeln!(out, "Requests:                {}", u.totals.records);
    let _ = writeln!(out, "Prompt tokens:           {}", u.totals.prompt_tokens);
    let _ = writeln!(
        out,
        "Completion tokens:       {}",
        u.totals.completion_tokens
    );
    let _ = writeln!(out, "Total tokens:            {}", u.totals.total_tokens);
    let _ = writeln!(
        out,
        "Protocol overhead:       {}",
        u.totals.protocol_overhead_tokens
    );
    if let Some(mean) = &u.mean_latency_secs {
        let _ = writeln!(out, "Mean latency:            {mean} s");
    }
    if let Some(per_hour) = u.projected_passages_per_hour {
        let _ = writeln!(out, "Projected throughput:    {per_hour} passages/hour");
    }
    if let Some(c) = &u.cost {
        let _ = writeln!(
            out,
            "Estimated cost:          {} {} (rates effective {})",
            c.amount, c.currency, c.rates_effective_date
        );
    }
    out
}

/// Lists the verdicts of several runs over the same passages next to each
/// other, e.g. a run without context and a run with paragraph context.
pub fn render_comparison(reports: &[&ComplianceReport]) -> String {
    let mut out = String::new();
    let Some(first) = reports.first() else {
        return out;
    };
    let title = format!("Verdict comparison: {}", first.doc_id);
    let _ = writeln!(out, "{title}\n{}", "=".repeat(title.len()));
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(
            out,
            "Run {}: {}/{}, {}",
            i + 1,
            r.run.provider_name,
            r.run.model_id,
            granularity_line(&r.run)
        );
    }
    let lookups: Vec<HashMap<&str, &ReportEntry>> = reports
        .iter()
        .map(|r| {
            r.entries
                .iter()
                .map(|e| (e.passage_id.as_str(), e))
                .collect()
        })
        .collect();
    for e in &first.entries {
        let _ = writeln!(out, "\n{}", e.passage_id);
        let _ = writeln!(out, "  Text: {}", indent(&e.text, "        "));
        for (i, lookup) in lookups.iter().enumerate() {
            let line = match lookup.get(e.passage_id.as_str()) {
                Some(x) if x.status == EntryStatus::Checked => {
                    format!(
                        "{} | {}",
                        rule_list(&x.satisfied_rule_ids),
                        indent(&x.justification, "           ")
                    )
                }
                Some(x) => format!("no verdict ({})", x.error.as_deref().unwrap_or("not run")),
                None => "not part of this run".to_string(),
            };
            let _ = writeln!(out, "  Run {}: {line}", i + 1);
        }
    }
    out
}

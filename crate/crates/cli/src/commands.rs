use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lexcheck::accounting::{
    cost_by_model, estimate_cost, format_cost, throughput_report, RateTable, UsageLedger,
};
use lexcheck::evaluation::{
    ablation_compare, format_label_lines, import_external_predictions, load_gold, load_splits,
    render_accuracy_table, render_metrics_table, score, AccuracyRow, GoldAnnotation, SplitName,
};
use lexcheck::pipeline::{check_document, CheckContext, DocumentRun, RunGranularity, RunPlan};
use lexcheck::report::render_comparison;
use lexcheck::rules::load_catalog;
use lexcheck::{
    chunk_document, render_report, Client, Metrics, ProviderConfig, RegulatoryArtifact,
    ReportFormat, RuleCatalog, Scalar as _, TemplateVariant, Verdict,
};
use serde::Serialize;

use crate::setup::{self, ensure_dir, file_label, write};
use crate::{
    CheckArgs, ChunkArgs, CostArgs, EvaluateArgs, ProviderArgs, TargetArg, EXIT_INCOMPLETE,
};

pub fn chunk(args: &ChunkArgs) -> Result<u8> {
    let cfg = setup::chunk_config(&args.chunking)?;
    let docs = setup::load_documents(&args.inputs)?;
    if let Some(dir) = &args.output_dir {
        ensure_dir(dir)?;
    }
    for doc in &docs {
        let chunked =
            chunk_document(doc, &cfg).with_context(|| format!("cannot chunk {}", doc.doc_id()))?;
        println!(
            "{}\tparagraphs={}\tsentences={}",
            doc.doc_id(),
            chunked.paragraphs.len(),
            chunked.sentences.len()
        );
        let mut listing = String::new();
        for p in chunked.paragraphs.iter().chain(&chunked.sentences) {
            let mut value = serde_json::to_value(p)?;
            value["raw_span"] = serde_json::to_value(doc.raw_span(p.span))?;
            listing.push_str(&serde_json::to_string(&value)?);
            listing.push('\n');
            if args.list {
                let raw = doc.raw_span(p.span);
                println!(
                    "{}\t{}..{}\t{}",
                    p.passage_id,
                    raw.start,
                    raw.end,
                    p.text.replace('\n', " ")
                );
            }
        }
        if let Some(dir) = &args.output_dir {
            write(dir, &format!("{}.passages.jsonl", doc.doc_id()), listing)?;
        }
    }
    Ok(0)
}

/// Everything needed to run models over a set of documents.
struct Session {
    catalog: RuleCatalog,
    docs: Vec<RegulatoryArtifact>,
    sentence_template: lexcheck::PromptTemplate,
    paragraph_template: lexcheck::PromptTemplate,
    chunk: lexcheck::ChunkConfig,
    plans: Vec<RunPlan>,
    generated_at: String,
}

struct ModelRuns {
    config: ProviderConfig,
    /// Per document, one run per plan.
    runs: Vec<Vec<DocumentRun>>,
}

impl ModelRuns {
    fn runs_for(&self, plan_index: usize) -> impl Iterator<Item = &DocumentRun> {
        self.runs.iter().map(move |doc_runs| &doc_runs[plan_index])
    }

    fn verdicts(&self, plan_index: usize) -> Vec<Verdict> {
        self.runs_for(plan_index)
            .flat_map(|r| r.verdicts.iter().cloned())
            .collect()
    }

    fn ledger(&self) -> UsageLedger {
        let mut ledger = UsageLedger::new();
        for r in self.runs.iter().flatten() {
            ledger.extend(r.ledger.clone());
        }
        ledger
    }

    fn incomplete(&self) -> bool {
        self.runs.iter().flatten().any(|r| r.report.incomplete)
    }

    fn total_failure(&self) -> bool {
        let runs: Vec<&DocumentRun> = self.runs.iter().flatten().collect();
        let passages: usize = runs.iter().map(|r| r.report.summary.passages).sum();
        let checked: usize = runs.iter().map(|r| r.report.summary.checked).sum();
        passages > 0 && checked == 0
    }
}

#[allow(clippy::too_many_arguments)]
fn session(
    inputs: &[std::path::PathBuf],
    catalog: &Path,
    granularity: crate::GranularityArg,
    paragraph_target: Option<TargetArg>,
    sentence_template: Option<&Path>,
    paragraph_template: Option<&Path>,
    chunking: &crate::ChunkingArgs,
    fixed_clock: Option<&str>,
) -> Result<Session> {
    let catalog = load_catalog(catalog)
        .with_context(|| format!("cannot load catalog {}", catalog.display()))?;
    Ok(Session {
        catalog,
        docs: setup::load_documents(inputs)?,
        sentence_template: setup::template(sentence_template, TemplateVariant::SentenceLevel)?,
        paragraph_template: setup::template(paragraph_template, TemplateVariant::ParagraphLevel)?,
        chunk: setup::chunk_config(chunking)?,
        plans: RunGranularity::from(granularity).plans(paragraph_target.map(Into::into)),
        generated_at: setup::timestamp(fixed_clock),
    })
}

fn run_models(
    s: &Session,
    provider: &ProviderArgs,
    rates: Option<&RateTable>,
) -> Result<Vec<ModelRuns>> {
    setup::provider_configs(provider)?
        .into_iter()
        .map(|config| {
            let client = Client::from_config(config.clone()).with_context(|| {
                format!(
                    "cannot set up provider {}/{}",
                    config.provider_name, config.model_id
                )
            })?;
            let ctx = CheckContext {
                client: &client,
                catalog: &s.catalog,
                sentence_template: &s.sentence_template,
                paragraph_template: &s.paragraph_template,
                chunk: &s.chunk,
                rates,
                generated_at: s.generated_at.clone(),
            };
            let runs = s
                .docs
                .iter()
                .map(|doc| {
                    check_document(&ctx, doc, &s.plans)
                        .with_context(|| format!("cannot check {}", doc.doc_id()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ModelRuns { config, runs })
        })
        .collect()
}

fn load_rates(path: Option<&Path>) -> Result<Option<RateTable>> {
    path.map(|p| {
        RateTable::from_file(p).with_context(|| format!("cannot load rates {}", p.display()))
    })
    .transpose()
}

fn write_ledger(dir: &Path, models: &[ModelRuns]) -> Result<()> {
    let mut ledger = UsageLedger::new();
    for m in models {
        ledger.extend(m.ledger());
    }
    write(dir, "usage.csv", ledger.to_csv_string())?;
    Ok(())
}

fn exit_code(models: &[ModelRuns]) -> Result<u8> {
    if models.iter().any(ModelRuns::total_failure) {
        bail!("no passage could be checked; see the reports for the provider errors");
    }
    Ok(if models.iter().any(ModelRuns::incomplete) {
        eprintln!("warning: some passages have no verdict; reports are flagged incomplete");
        EXIT_INCOMPLETE
    } else {
        0
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Scores each plan of each model against `gold` and writes metrics, the
/// predictions in label-file form, and ablation/table files when both
/// granularities ran. With `restrict`, verdicts for passages outside the gold
/// set are dropped instead of rejected.
fn write_scores(
    dir: &Path,
    s: &Session,
    models: &[ModelRuns],
    gold: &[GoldAnnotation],
    restrict: bool,
) -> Result<()> {
    let gold_ids: HashSet<&str> = gold.iter().map(|g| g.passage_id.as_str()).collect();
    let mut table = Vec::new();
    for m in models {
        let label = file_label(&m.config.model_id);
        let mut summaries = Vec::new();
        for (i, plan) in s.plans.iter().enumerate() {
            let verdicts: Vec<Verdict> = m
                .verdicts(i)
                .into_iter()
                .filter(|v| !restrict || gold_ids.contains(v.passage_id.as_str()))
                .collect();
            let metrics: Metrics = score(&verdicts, gold, &s.catalog).with_context(|| {
                format!("cannot score {} {} run", m.config.model_id, plan.label())
            })?;
            let stem = format!("{label}.{}", plan.label());
            write(dir, &format!("{stem}.metrics.json"), to_json(&metrics)?)?;
            write(
                dir,
                &format!("{stem}.metrics.txt"),
                render_metrics_table(&metrics),
            )?;
            write(
                dir,
                &format!("{stem}.predictions.txt"),
                format_label_lines(
                    verdicts
                        .iter()
                        .map(|v| (v.passage_id.as_str(), &v.satisfied_rule_ids)),
                ),
            )?;
            summaries.push((plan.label(), metrics));
        }
        if let [(_, sentence), (_, paragraph)] = summaries.as_slice() {
            let ablation = ablation_compare(sentence, paragraph)?;
            write(dir, &format!("{label}.ablation.json"), to_json(&ablation)?)?;
            table.push(AccuracyRow {
                model: m.config.model_id.clone(),
                sentence: sentence.mean_accuracy,
                paragraph: paragraph.mean_accuracy,
            });
        }
    }
    if !table.is_empty() {
        write(dir, "accuracy_table.txt", render_accuracy_table(&table))?;
        write(dir, "accuracy_table.json", to_json(&table)?)?;
    }
    Ok(())
}

fn load_scoring_gold(
    gold: &Path,
    splits: Option<&Path>,
    catalog: &RuleCatalog,
) -> Result<Vec<GoldAnnotation>> {
    let gold = load_gold(gold, catalog)
        .with_context(|| format!("cannot load gold labels {}", gold.display()))?;
    let Some(path) = splits else {
        return Ok(gold);
    };
    let splits =
        load_splits(path).with_context(|| format!("cannot load splits {}", path.display()))?;
    let eval = splits
        .iter()
        .find(|s| s.split_name == SplitName::EvalE)
        .with_context(|| format!("{} has no eval_E members", path.display()))?;
    Ok(eval.filter(&gold).into_iter().cloned().collect())
}

pub fn check(args: &CheckArgs) -> Result<u8> {
    let r = &args.run;
    let s = session(
        &r.inputs,
        &r.catalog,
        r.granularity,
        r.paragraph_target,
        r.sentence_template.as_deref(),
        r.paragraph_template.as_deref(),
        &r.chunking,
        r.fixed_clock.as_deref(),
    )?;
    let rates = load_rates(r.rates.as_deref())?;
    let gold = args
        .gold
        .as_deref()
        .map(|g| load_scoring_gold(g, None, &s.catalog))
        .transpose()?;
    let models = run_models(&s, &r.provider, rates.as_ref())?;
    let dir = &r.output_dir;
    ensure_dir(dir)?;
    let multi_model = models.len() > 1;
    for m in &models {
        let prefix = if multi_model {
            format!("{}.", file_label(&m.config.model_id))
        } else {
            String::new()
        };
        for (doc, runs) in s.docs.iter().zip(&m.runs) {
            for run in runs {
                let stem = format!("{prefix}{}.{}", doc.doc_id(), run.plan.label());
                write(
                    dir,
                    &format!("{stem}.report.json"),
                    render_report(&run.report, ReportFormat::Machine),
                )?;
                write(
                    dir,
                    &format!("{stem}.report.txt"),
                    render_report(&run.report, ReportFormat::Human),
                )?;
                println!(
                    "{stem}: {} of {} passages checked, {} of {} rules satisfied",
                    run.report.summary.checked,
                    run.report.summary.passages,
                    run.report.summary.rules_satisfied,
                    run.report.rollup.len()
                );
            }
            if let [a, b] = runs.as_slice() {
                let text = render_comparison(&[&a.report, &b.report]);
                write(dir, &format!("{prefix}{}.ablation.txt", doc.doc_id()), text)?;
            }
        }
    }
    write_ledger(dir, &models)?;
    if let Some(gold) = &gold {
        write_scores(dir, &s, &models, gold, false)?;
    }
    exit_code(&models)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<u8> {
    let catalog = load_catalog(&args.catalog)
        .with_context(|| format!("cannot load catalog {}", args.catalog.display()))?;
    let gold = load_scoring_gold(&args.gold, args.splits.as_deref(), &catalog)?;
    ensure_dir(&args.output_dir)?;

    if let Some(path) = &args.predictions {
        let predictions = import_external_predictions(path, &catalog)
            .with_context(|| format!("cannot import predictions {}", path.display()))?;
        let metrics: Metrics = score(&predictions, &gold, &catalog)?;
        write(
            &args.output_dir,
            "external.metrics.json",
            to_json(&metrics)?,
        )?;
        let table = render_metrics_table(&metrics);
        write(&args.output_dir, "external.metrics.txt", &table)?;
        print!("{table}");
        return Ok(0);
    }

    if args.inputs.is_empty() {
        bail!("evaluate needs input documents unless --predictions is given");
    }
    let s = session(
        &args.inputs,
        &args.catalog,
        args.granularity,
        args.paragraph_target,
        args.sentence_template.as_deref(),
        args.paragraph_template.as_deref(),
        &args.chunking,
        args.fixed_clock.as_deref(),
    )?;
    let models = run_models(&s, &args.provider, None)?;
    write_ledger(&args.output_dir, &models)?;
    write_scores(&args.output_dir, &s, &models, &gold, args.splits.is_some())?;
    let table = args.output_dir.join("accuracy_table.txt");
    if table.exists() {
        print!("{}", std::fs::read_to_string(table)?);
    } else {
        for m in &models {
            for plan in &s.plans {
                let path = args.output_dir.join(format!(
                    "{}.{}.metrics.txt",
                    file_label(&m.config.model_id),
                    plan.label()
                ));
                print!("{}", std::fs::read_to_string(path)?);
            }
        }
    }
    exit_code(&models)
}

#[derive(Serialize)]
struct CostReport {
    currency: String,
    rates_effective_date: String,
    per_model: Vec<ModelLine>,
    priced_as: Vec<PricedAs>,
    mean_latency_secs: Option<f64>,
    projected_passages_per_hour: Option<u64>,
}

#[derive(Serialize)]
struct ModelLine {
    provider_name: String,
    model_id: String,
    requests: usize,
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
    protocol_overhead_tokens: i64,
    cost: String,
}

#[derive(Serialize)]
struct PricedAs {
    provider_name: String,
    model_id: String,
    cost: String,
}

pub fn cost(args: &CostArgs) -> Result<u8> {
    let rates = RateTable::from_file(&args.rates)
        .with_context(|| format!("cannot load rates {}", args.rates.display()))?;
    let ledger = UsageLedger::from_file(&args.ledger)
        .with_context(|| format!("cannot load ledger {}", args.ledger.display()))?;
    let per_model = cost_by_model::<lexcheck::Rational64>(&ledger, &rates)?
        .into_iter()
        .map(|m| ModelLine {
            requests: m.totals.records,
            prompt_tokens: m.totals.prompt_tokens,
            completion_tokens: m.totals.completion_tokens,
            total_tokens: m.totals.total_tokens,
            protocol_overhead_tokens: m.totals.protocol_overhead_tokens,
            cost: format_cost(&m.cost),
            provider_name: m.provider_name,
            model_id: m.model_id,
        })
        .collect();
    let priced_as = args
        .price_as
        .iter()
        .map(|key| {
            let (provider_name, model_id) = key
                .split_once('/')
                .with_context(|| format!("--price-as expects provider/model, got {key}"))?;
            let amount: lexcheck::Rational64 =
                estimate_cost(&ledger, &rates, provider_name, model_id)?;
            Ok(PricedAs {
                provider_name: provider_name.into(),
                model_id: model_id.into(),
                cost: format_cost(&amount),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let throughput = throughput_report::<lexcheck::Rational64>(&ledger).ok();
    let report = CostReport {
        currency: rates.currency.clone(),
        rates_effective_date: rates.effective_date.clone(),
        per_model,
        priced_as,
        mean_latency_secs: throughput
            .as_ref()
            .map(|t| t.mean_latency_secs.round_places(3)),
        projected_passages_per_hour: throughput
            .as_ref()
            .and_then(|t| t.whole_passages_per_hour()),
    };
    if args.json {
        print!("{}", to_json(&report)?);
    } else {
        print!("{}", render_cost(&report));
    }
    Ok(0)
}

fn render_cost(r: &CostReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Rates effective {} ({})",
        r.rates_effective_date, r.currency
    );
    let _ = writeln!(
        out,
        "{:<40} {:>8} {:>10} {:>10} {:>10} {:>9} {:>10}",
        "model", "requests", "prompt", "completion", "total", "overhead", "cost"
    );
    for m in &r.per_model {
        let _ = writeln!(
            out,
            "{:<40} {:>8} {:>10} {:>10} {:>10} {:>9} {:>10}",
            format!("{}/{}", m.provider_name, m.model_id),
            m.requests,
            m.prompt_tokens,
            m.completion_tokens,
            m.total_tokens,
            m.protocol_overhead_tokens,
            m.cost
        );
    }
    for p in &r.priced_as {
        let _ = writeln!(
            out,
            "Whole ledger at {}/{} rates: {} {}",
            p.provider_name, p.model_id, p.cost, r.currency
        );
    }
    match (r.mean_latency_secs, r.projected_passages_per_hour) {
        (Some(mean), Some(per_hour)) => {
            let _ = writeln!(
                out,
                "Mean latency {mean:.3} s per passage, {per_hour} passages per hour"
            );
        }
        (Some(mean), None) => {
            let _ = writeln!(out, "Mean latency {mean:.3} s per passage");
        }
        _ => {
            let _ = writeln!(out, "No requests in the ledger");
        }
    }
    out
}

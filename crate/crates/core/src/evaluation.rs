//! Scoring verdicts against gold annotations.
//!
//! Every catalog rule is treated as an independent binary decision per
//! passage. A label set of `{99}` counts as "no real rule". Precision is
//! undefined when a rule was never predicted and recall is undefined when a
//! rule never occurs in the gold set; undefined values are `None` and are left
//! out of macro means rather than coerced to 0 or 1. The F-score is
//! `2tp / (2tp + fp + fn)`, which equals the harmonic mean of precision and
//! recall whenever both exist and is 0 when both are 0.
//!
//! Macro means (including the mean accuracy used for the sentence/paragraph
//! comparison) are unweighted averages over *active* rules: rules with at
//! least one gold positive or one predicted positive.
//!
//! # Label files
//!
//! Gold and external prediction files share one line format:
//!
//! ```text
//! # comment
//! passage_id,5;12
//! other_passage,99
//! ```
//!
//! Split files assign passages to the training or evaluation partition:
//!
//! ```text
//! eval_E,passage_id
//! train_P,other_passage
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::{RuleCatalog, RuleId, SENTINEL_ID};
use crate::scalar::{format_fixed, Scalar};
use crate::verdict::{ParseStatus, Verdict};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvaluationError {
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: rule id {id} is not in the catalog")]
    UnknownRuleId { line: usize, id: RuleId },
    #[error("passage {passage_id}: {message}")]
    InvalidLabels { passage_id: String, message: String },
    #[error("predictions reference passages missing from the gold set: {}", .0.join(", "))]
    UnknownPassages(Vec<String>),
    #[error("passage {0} has more than one prediction")]
    DuplicatePrediction(String),
    #[error("passage {0} has more than one gold annotation")]
    DuplicateGold(String),
    #[error("runs were scored over different passage counts (sentence {sentence}, paragraph {paragraph})")]
    CountMismatch { sentence: usize, paragraph: usize },
    #[error("passages assigned to both splits: {}", .0.join(", "))]
    OverlappingSplits(Vec<String>),
}

fn check_labels(
    passage_id: &str,
    labels: &BTreeSet<RuleId>,
    catalog: &RuleCatalog,
) -> Result<(), EvaluationError> {
    let invalid = |message: String| EvaluationError::InvalidLabels {
        passage_id: passage_id.to_string(),
        message,
    };
    if labels.contains(&SENTINEL_ID) && labels.len() > 1 {
        return Err(invalid(format!("sentinel {SENTINEL_ID} must stand alone")));
    }
    if let Some(id) = labels
        .iter()
        .find(|&&id| id != SENTINEL_ID && !catalog.contains(id))
    {
        return Err(invalid(format!(
            "rule id {id} is not in catalog {}",
            catalog.catalog_id()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub passage_id: String,
    pub labels: BTreeSet<RuleId>,
}

impl GoldAnnotation {
    pub fn new(
        passage_id: impl Into<String>,
        labels: impl IntoIterator<Item = RuleId>,
        catalog: &RuleCatalog,
    ) -> Result<Self, EvaluationError> {
        let a = Self {
            passage_id: passage_id.into(),
            labels: labels.into_iter().collect(),
        };
        check_labels(&a.passage_id, &a.labels, catalog)?;
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitName {
    #[serde(rename = "train_P")]
    TrainP,
    #[serde(rename = "eval_E")]
    EvalE,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::TrainP => "train_P",
            SplitName::EvalE => "eval_E",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train_P" => Some(SplitName::TrainP),
            "eval_E" => Some(SplitName::EvalE),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub split_name: SplitName,
    pub members: Vec<String>,
}

impl DatasetSplit {
    /// Keeps the gold annotations whose passage belongs to this split.
    pub fn filter<'a>(&self, gold: &'a [GoldAnnotation]) -> Vec<&'a GoldAnnotation> {
        let members: HashSet<&str> = self.members.iter().map(String::as_str).collect();
        gold.iter()
            .filter(|g| members.contains(g.passage_id.as_str()))
            .collect()
    }
}

/// Fails when any passage is listed in more than one split.
pub fn check_disjoint(splits: &[DatasetSplit]) -> Result<(), EvaluationError> {
    let mut owner: HashMap<&str, SplitName> = HashMap::new();
    let mut shared = BTreeSet::new();
    for split in splits {
        for m in &split.members {
            match owner.get(m.as_str()) {
                Some(&other) if other != split.split_name => {
                    shared.insert(m.clone());
                }
                _ => {
                    owner.insert(m, split.split_name);
                }
            }
        }
    }
    if shared.is_empty() {
        Ok(())
    } else {
        Err(EvaluationError::OverlappingSplits(
            shared.into_iter().collect(),
        ))
    }
}

pub fn parse_splits(source: &str) -> Result<Vec<DatasetSplit>, EvaluationError> {
    let mut by_name: BTreeMap<SplitName, Vec<String>> = BTreeMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: &str| EvaluationError::Malformed {
            line: idx + 1,
            message: message.to_string(),
        };
        let (name, pid) = line
            .split_once(',')
            .ok_or_else(|| malformed("expected split_name,passage_id"))?;
        let name = SplitName::parse(name.trim())
            .ok_or_else(|| malformed("split name must be train_P or eval_E"))?;
        let pid = pid.trim();
        if pid.is_empty() {
            return Err(malformed("empty passage id"));
        }
        by_name.entry(name).or_default().push(pid.to_string());
    }
    let splits: Vec<DatasetSplit> = by_name
        .into_iter()
        .map(|(split_name, members)| DatasetSplit {
            split_name,
            members,
        })
        .collect();
    check_disjoint(&splits)?;
    Ok(splits)
}

fn read(path: &Path) -> Result<String, EvaluationError> {
    std::fs::read_to_string(path).map_err(|e| EvaluationError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_splits(path: impl AsRef<Path>) -> Result<Vec<DatasetSplit>, EvaluationError> {
    parse_splits(&read(path.as_ref())?)
}

/// Parses `passage_id,id;id;...` records, rejecting malformed rows, ids
/// outside the catalog, a sentinel mixed with rule ids, and repeated passages.
fn parse_label_lines(
    source: &str,
    catalog: &RuleCatalog,
) -> Result<Vec<(String, BTreeSet<RuleId>)>, EvaluationError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| EvaluationError::Malformed {
            line: line_no,
            message,
        };
        let (pid, ids) = line
            .split_once(',')
            .ok_or_else(|| malformed("expected passage_id,id;id;...".into()))?;
        let pid = pid.trim();
        if pid.is_empty() {
            return Err(malformed("empty passage id".into()));
        }
        let mut labels = BTreeSet::new();
        for token in ids.split(';') {
            let token = token.trim();
            let id: RuleId = token
                .parse()
                .map_err(|_| malformed(format!("{token:?} is not a rule id")))?;
            if id != SENTINEL_ID && !catalog.contains(id) {
                return Err(EvaluationError::UnknownRuleId { line: line_no, id });
            }
            labels.insert(id);
        }
        if labels.contains(&SENTINEL_ID) && labels.len() > 1 {
            return Err(malformed(format!(
                "sentinel {SENTINEL_ID} must stand alone"
            )));
        }
        if !seen.insert(pid.to_string()) {
            return Err(malformed(format!("passage {pid} listed twice")));
        }
        out.push((pid.to_string(), labels));
    }
    Ok(out)
}

pub fn parse_gold(
    source: &str,
    catalog: &RuleCatalog,
) -> Result<Vec<GoldAnnotation>, EvaluationError> {
    Ok(parse_label_lines(source, catalog)?
        .into_iter()
        .map(|(passage_id, labels)| GoldAnnotation { passage_id, labels })
        .collect())
}

pub fn load_gold(
    path: impl AsRef<Path>,
    catalog: &RuleCatalog,
) -> Result<Vec<GoldAnnotation>, EvaluationError> {
    parse_gold(&read(path.as_ref())?, catalog)
}

pub fn parse_external_predictions(
    source: &str,
    catalog: &RuleCatalog,
) -> Result<Vec<Verdict>, EvaluationError> {
    Ok(parse_label_lines(source, catalog)?
        .into_iter()
        .map(|(pid, ids)| Verdict::new(pid, ids, "", ParseStatus::Clean))
        .collect())
}

/// Reads predictions produced by another system (for example a classifier
/// baseline) so they can be scored exactly like model verdicts.
pub fn import_external_predictions(
    path: impl AsRef<Path>,
    catalog: &RuleCatalog,
) -> Result<Vec<Verdict>, EvaluationError> {
    parse_external_predictions(&read(path.as_ref())?, catalog)
}

/// Writes label sets in the shared line format, in the given order.
pub fn format_label_lines<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a BTreeSet<RuleId>)>,
) -> String {
    let mut out = String::new();
    for (pid, ids) in rows {
        let ids: Vec<String> = if ids.is_empty() {
            vec![SENTINEL_ID.to_string()]
        } else {
            ids.iter().map(|i| i.to_string()).collect()
        };
        let _ = writeln!(out, "{pid},{}", ids.join(";"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub rule_id: RuleId,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn is_active(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    pub fn precision<T: Scalar>(&self) -> Option<T> {
        let d = self.tp + self.fp;
        (d > 0).then(|| T::ratio(self.tp, d))
    }

    pub fn recall<T: Scalar>(&self) -> Option<T> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| T::ratio(self.tp, d))
    }

    pub fn f_score<T: Scalar>(&self) -> Option<T> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| T::ratio(2 * self.tp, d))
    }

    pub fn accuracy<T: Scalar>(&self) -> Option<T> {
        let d = self.total();
        (d > 0).then(|| T::ratio(self.tp + self.tn, d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMetrics<T> {
    pub rule_id: RuleId,
    pub counts: ConfusionCounts,
    pub active: bool,
    pub precision: Option<T>,
    pub recall: Option<T>,
    pub f_score: Option<T>,
    pub accuracy: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary<T> {
    pub catalog_id: String,
    pub scored_passage_count: usize,
    pub per_rule: Vec<RuleMetrics<T>>,
    pub active_rule_count: usize,
    pub macro_precision: Option<T>,
    pub macro_recall: Option<T>,
    pub macro_f: Option<T>,
    pub mean_accuracy: Option<T>,
}

fn mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut n = 0u64;
    let mut sum = T::zero();
    for v in values {
        sum = sum + v;
        n += 1;
    }
    (n > 0).then(|| sum / T::from_count(n))
}

impl<T: Scalar> MetricsSummary<T> {
    pub fn from_counts(
        catalog_id: impl Into<String>,
        scored_passage_count: usize,
        counts: Vec<ConfusionCounts>,
    ) -> Self {
        let per_rule: Vec<RuleMetrics<T>> = counts
            .into_iter()
            .map(|c| RuleMetrics {
                rule_id: c.rule_id,
                active: c.is_active(),
                precision: c.precision(),
                recall: c.recall(),
                f_score: c.f_score(),
                accuracy: c.accuracy(),
                counts: c,
            })
            .collect();
        let active = || per_rule.iter().filter(|r| r.active);
        Self {
            catalog_id: catalog_id.into(),
            scored_passage_count,
            active_rule_count: active().count(),
            macro_precision: mean(active().filter_map(|r| r.precision.clone())),
            macro_recall: mean(active().filter_map(|r| r.recall.clone())),
            macro_f: mean(active().filter_map(|r| r.f_score.clone())),
            mean_accuracy: mean(active().filter_map(|r| r.accuracy.clone())),
            per_rule,
        }
    }

    pub fn rule(&self, id: RuleId) -> Option<&RuleMetrics<T>> {
        self.per_rule.iter().find(|r| r.rule_id == id)
    }

    /// Converts every value to `f64`, e.g. to serialize an exact summary.
    pub fn to_f64(&self) -> MetricsSummary<f64> {
        let conv = |v: &Option<T>| v.as_ref().map(Scalar::to_f64_lossy);
        MetricsSummary {
            catalog_id: self.catalog_id.clone(),
            scored_passage_count: self.scored_passage_count,
            per_rule: self
                .per_rule
                .iter()
                .map(|r| RuleMetrics {
                    rule_id: r.rule_id,
                    counts: r.counts,
                    active: r.active,
                    precision: conv(&r.precision),
                    recall: conv(&r.recall),
                    f_score: conv(&r.f_score),
                    accuracy: conv(&r.accuracy),
                })
                .collect(),
            active_rule_count: self.active_rule_count,
            macro_precision: conv(&self.macro_precision),
            macro_recall: conv(&self.macro_recall),
            macro_f: conv(&self.macro_f),
            mean_accuracy: conv(&self.mean_accuracy),
        }
    }
}

/// Scores predictions over the gold passages. Gold passages without a
/// prediction count as predicting no rule.
pub fn score<T: Scalar>(
    predictions: &[Verdict],
    gold: &[GoldAnnotation],
    catalog: &RuleCatalog,
) -> Result<MetricsSummary<T>, EvaluationError> {
    let mut gold_ids = HashSet::new();
    for g in gold {
        if !gold_ids.insert(g.passage_id.as_str()) {
            return Err(EvaluationError::DuplicateGold(g.passage_id.clone()));
        }
        check_labels(&g.passage_id, &g.labels, catalog)?;
    }
    let unknown: BTreeSet<String> = predictions
        .iter()
        .filter(|v| !gold_ids.contains(v.passage_id.as_str()))
        .map(|v| v.passage_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(EvaluationError::UnknownPassages(
            unknown.into_iter().collect(),
        ));
    }
    let mut predicted: HashMap<&str, &BTreeSet<RuleId>> = HashMap::new();
    for v in predictions {
        if predicted
            .insert(&v.passage_id, &v.satisfied_rule_ids)
            .is_some()
        {
            return Err(EvaluationError::DuplicatePrediction(v.passage_id.clone()));
        }
        check_labels(&v.passage_id, &v.satisfied_rule_ids, catalog)?;
    }
    let empty = BTreeSet::new();
    let counts = catalog
        .ids()
        .map(|rule_id| {
            let mut c = ConfusionCounts {
                rule_id,
                ..Default::default()
            };
            for g in gold {
                let p = predicted
                    .get(g.passage_id.as_str())
                    .copied()
                    .unwrap_or(&empty);
                match (p.contains(&rule_id), g.labels.contains(&rule_id)) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            c
        })
        .collect();
    Ok(MetricsSummary::from_counts(
        catalog.catalog_id(),
        gold.len(),
        counts,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta<T> {
    pub sentence: Option<T>,
    pub paragraph: Option<T>,
    /// `paragraph - sentence`, when both are defined.
    pub delta: Option<T>,
    pub improved: bool,
}

impl<T: Scalar> MetricDelta<T> {
    fn new(sentence: &Option<T>, paragraph: &Option<T>) -> Self {
        let delta = match (sentence, paragraph) {
            (Some(s), Some(p)) => Some(p.clone() - s.clone()),
            _ => None,
        };
        let improved = delta.as_ref().is_some_and(|d| *d > T::zero());
        Self {
            sentence: sentence.clone(),
            paragraph: paragraph.clone(),
            delta,
            improved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationComparison<T> {
    pub scored_passage_count: usize,
    pub macro_precision: MetricDelta<T>,
    pub macro_recall: MetricDelta<T>,
    pub macro_f: MetricDelta<T>,
    pub mean_accuracy: MetricDelta<T>,
    /// Per-rule accuracy deltas for rules present in both runs.
    pub per_rule_accuracy: BTreeMap<RuleId, MetricDelta<T>>,
}

pub fn ablation_compare<T: Scalar>(
    sentence_run: &MetricsSummary<T>,
    paragraph_run: &MetricsSummary<T>,
) -> Result<AblationComparison<T>, EvaluationError> {
    if sentence_run.scored_passage_count != paragraph_run.scored_passage_count {
        return Err(EvaluationError::CountMismatch {
            sentence: sentence_run.scored_passage_count,
            paragraph: paragraph_run.scored_passage_count,
        });
    }
    let per_rule_accuracy = sentence_run
        .per_rule
        .iter()
        .filter_map(|s| {
            let p = paragraph_run.rule(s.rule_id)?;
            Some((s.rule_id, MetricDelta::new(&s.accuracy, &p.accuracy)))
        })
        .collect();
    Ok(AblationComparison {
        scored_passage_count: sentence_run.scored_passage_count,
        macro_precision: MetricDelta::new(
            &sentence_run.macro_precision,
            &paragraph_run.macro_precision,
        ),
        macro_recall: MetricDelta::new(&sentence_run.macro_recall, &paragraph_run.macro_recall),
        macro_f: MetricDelta::new(&sentence_run.macro_f, &paragraph_run.macro_f),
        mean_accuracy: MetricDelta::new(&sentence_run.mean_accuracy, &paragraph_run.mean_accuracy),
        per_rule_accuracy,
    })
}

/// One row of the model x granularity mean-accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow<T> {
    pub model: String,
    pub sentence: Option<T>,
    pub paragraph: Option<T>,
}

fn cell<T: Scalar>(v: &Option<T>, places: usize) -> String {
    v.as_ref()
        .map_or_else(|| "n/a".to_string(), |v| format_fixed(v, places))
}

/// Renders mean accuracy per model, as percentages, one row per model.
pub fn render_accuracy_table<T: Scalar>(rows: &[AccuracyRow<T>]) -> String {
    let hundred = T::from_count(100);
    let pct = |v: &Option<T>| cell(&v.clone().map(|v| v * hundred.clone()), 1);
    let width = rows
        .iter()
        .map(|r| r.model.len())
        .max()
        .unwrap_or(0)
        .max("Model".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} | {:>22} | {:>23}",
        "Model", "Sentence accuracy (%)", "Paragraph accuracy (%)"
    );
    let _ = writeln!(
        out,
        "{}-+-{}-+-{}",
        "-".repeat(width),
        "-".repeat(22),
        "-".repeat(23)
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:>22} | {:>23}",
            r.model,
            pct(&r.sentence),
            pct(&r.paragraph)
        );
    }
    out
}

/// Plain-text metrics table: one line per active rule, then macro means.
pub fn render_metrics_table<T: Scalar>(m: &MetricsSummary<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "catalog {}: {} passages scored, {} active rules",
        m.catalog_id, m.scored_passage_count, m.active_rule_count
    );
    let _ = writeln!(
        out,
        "{:>5} {:>4} {:>4} {:>4} {:>4} {:>9} {:>9} {:>9} {:>9}",
        "rule", "tp", "fp", "fn", "tn", "precision", "recall", "f", "accuracy"
    );
    for r in m.per_rule.iter().filter(|r| r.active) {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "{:>5} {:>4} {:>4} {:>4} {:>4} {:>9} {:>9} {:>9} {:>9}",
            r.rule_id,
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            cell(&r.precision, 4),
            cell(&r.recall, 4),
            cell(&r.f_score, 4),
            cell(&r.accuracy, 4)
        );
    }
    let _ = writeln!(
        out,
        "{:>5} {:>4} {:>4} {:>4} {:>4} {:>9} {:>9} {:>9} {:>9}",
        "macro",
        "",
        "",
        "",
        "",
        cell(&m.macro_precision, 4),
        cell(&m.macro_recall, 4),
        cell(&m.macro_f, 4),
        cell(&m.mean_accuracy, 4)
    );
    out
}

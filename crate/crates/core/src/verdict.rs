//! Parsing model responses into verdicts.
//!
//! The answer grammar requested by the shipped templates is
//!
//! ```text
//! RULES: <id>[, <id>]*
//! JUSTIFICATION: <free text, may span lines>
//! ```
//!
//! Anything else goes through a lenient scan for rule ids; parsing never
//! fails outright, the outcome is recorded in [`ParseStatus`].

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::rules::{RuleCatalog, RuleId, SENTINEL_ID};

pub const RULES_LABEL: &str = "RULES:";
pub const JUSTIFICATION_LABEL: &str = "JUSTIFICATION:";

/// Lines the fallback scanner looks at.
const FALLBACK_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Recovered,
    Failed,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Clean => "clean",
            ParseStatus::Recovered => "recovered",
            ParseStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passage_id: String,
    pub satisfied_rule_ids: BTreeSet<RuleId>,
    pub justification: String,
    pub raw_response: String,
    pub parse_status: ParseStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Verdict {
    pub fn new(
        passage_id: impl Into<String>,
        ids: impl IntoIterator<Item = RuleId>,
        justification: impl Into<String>,
        parse_status: ParseStatus,
    ) -> Self {
        Self {
            passage_id: passage_id.into(),
            satisfied_rule_ids: ids.into_iter().collect(),
            justification: justification.into(),
            raw_response: String::new(),
            parse_status,
            warnings: Vec::new(),
        }
    }

    pub fn failed(passage_id: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            passage_id: passage_id.into(),
            satisfied_rule_ids: BTreeSet::new(),
            justification: String::new(),
            raw_response: raw.into(),
            parse_status: ParseStatus::Failed,
            warnings: Vec::new(),
        }
    }

    /// Rule ids other than the sentinel.
    pub fn real_rule_ids(&self) -> impl Iterator<Item = RuleId> + '_ {
        self.satisfied_rule_ids
            .iter()
            .copied()
            .filter(|&id| id != SENTINEL_ID)
    }

    pub fn is_not_applicable(&self) -> bool {
        self.satisfied_rule_ids.len() == 1 && self.satisfied_rule_ids.contains(&SENTINEL_ID)
    }

    /// Renders the verdict in the answer grammar.
    pub fn to_response_text(&self) -> String {
        let ids: Vec<String> = self
            .satisfied_rule_ids
            .iter()
            .map(|id| id.to_string())
            .collect();
        format!(
            "{RULES_LABEL} {}\n{JUSTIFICATION_LABEL} {}",
            ids.join(", "),
            self.justification
        )
    }
}

fn id_list_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+(?:\s*,\s*\d+)*)\s*$").expect("valid regex"))
}

fn loose_id_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[Rr]?(\d{1,6})\b").expect("valid regex"))
}

fn parse_clean(raw: &str) -> Option<(BTreeSet<RuleId>, String)> {
    let text = raw.trim();
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let list = first.trim_end().strip_prefix(RULES_LABEL)?;
    let caps = id_list_pattern().captures(list)?;
    let ids = caps[1]
        .split(',')
        .map(|s| s.trim().parse::<RuleId>().ok())
        .collect::<Option<BTreeSet<_>>>()?;
    let justification = rest.trim_start().strip_prefix(JUSTIFICATION_LABEL)?;
    Some((ids, justification.trim().to_string()))
}

fn scan_ids(raw: &str, catalog: &RuleCatalog) -> BTreeSet<RuleId> {
    raw.lines()
        .take(FALLBACK_WINDOW)
        .flat_map(|line| loose_id_pattern().captures_iter(line))
        .filter_map(|c| c[1].parse::<RuleId>().ok())
        .filter(|&id| id == SENTINEL_ID || catalog.contains(id))
        .collect()
}

/// Parses a raw model answer. Total: every input yields a verdict.
pub fn parse_response(raw: &str, catalog: &RuleCatalog, passage_id: &str) -> Verdict {
    let verdict = if let Some((ids, justification)) = parse_clean(raw) {
        Verdict {
            passage_id: passage_id.to_string(),
            satisfied_rule_ids: ids,
            justification,
            raw_response: raw.to_string(),
            parse_status: ParseStatus::Clean,
            warnings: Vec::new(),
        }
    } else {
        let ids = scan_ids(raw, catalog);
        if ids.is_empty() {
            return Verdict::failed(passage_id, raw);
        }
        Verdict {
            passage_id: passage_id.to_string(),
            satisfied_rule_ids: ids,
            justification: raw.trim().to_string(),
            raw_response: raw.to_string(),
            parse_status: ParseStatus::Recovered,
            warnings: Vec::new(),
        }
    };
    validate_verdict(verdict, catalog)
}

/// Drops ids unknown to the catalog and resolves a sentinel mixed with real
/// ids in favour of the real ids. Either repair downgrades a clean verdict to
/// recovered; a verdict left without ids is failed.
pub fn validate_verdict(mut v: Verdict, catalog: &RuleCatalog) -> Verdict {
    if v.parse_status == ParseStatus::Failed {
        if !v.satisfied_rule_ids.is_empty() {
            v.warnings
                .push("failed verdict carried rule ids; cleared".into());
            v.satisfied_rule_ids.clear();
        }
        return v;
    }
    let mut repaired = false;
    let unknown: Vec<RuleId> = v
        .satisfied_rule_ids
        .iter()
        .copied()
        .filter(|&id| id != SENTINEL_ID && !catalog.contains(id))
        .collect();
    for id in unknown {
        v.satisfied_rule_ids.remove(&id);
        v.warnings.push(format!(
            "rule id {id} is not in catalog {}; dropped",
            catalog.catalog_id()
        ));
        log::warn!("passage {}: dropped unknown rule id {id}", v.passage_id);
        repaired = true;
    }
    if v.satisfied_rule_ids.contains(&SENTINEL_ID) && v.satisfied_rule_ids.len() > 1 {
        v.satisfied_rule_ids.remove(&SENTINEL_ID);
        v.warnings.push(format!(
            "sentinel {SENTINEL_ID} listed together with rule ids; kept the rule ids"
        ));
        repaired = true;
    }
    if v.satisfied_rule_ids.is_empty() {
        v.warnings.push("no known rule id left after repair".into());
        v.parse_status = ParseStatus::Failed;
    } else if repaired && v.parse_status == ParseStatus::Clean {
        v.parse_status = ParseStatus::Recovered;
    }
    v
}

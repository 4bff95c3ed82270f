//! Compliance rule catalogs.
//!
//! Catalog files are line oriented, UTF-8:
//!
//! ```text
//! # comment
//! @catalog gdpr-art28-dpa
//! 1 | controller,identity | The DPA shall contain at least one controller's identity and contact details.
//! 2 | | A rule without tags.
//! ```
//!
//! Each record is `id | tags | description`, split on the first two `|`.
//! Tags are comma separated and may be empty; the description runs to the
//! end of the line and may itself contain `|`. Surrounding whitespace of
//! every field is ignored. Blank lines and `#` comments are skipped. The
//! optional `@catalog` directive names the catalog, otherwise the file stem
//! is used.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type RuleId = u32;

/// Reserved id meaning "no rule applies".
pub const SENTINEL_ID: RuleId = 99;

pub const SENTINEL_LINE: &str =
    "R99: Not applicable. Answer 99 alone when the passage satisfies none of the rules above.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RulesError {
    #[error("failed to read catalog {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: rule id {id} already defined on line {first_line}")]
    DuplicateId {
        line: usize,
        id: RuleId,
        first_line: usize,
    },
    #[error("line {line}: rule id {SENTINEL_ID} is reserved for the not-applicable sentinel")]
    SentinelId { line: usize },
    #[error("line {line}: rule id must be at least 1")]
    ZeroId { line: usize },
    #[error("line {line}: rule {id} has an empty description")]
    EmptyDescription { line: usize, id: RuleId },
    #[error("invalid rule {id}: {message}")]
    InvalidRule { id: RuleId, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceRule {
    pub rule_id: RuleId,
    pub description: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl ComplianceRule {
    pub fn new(rule_id: RuleId, description: impl Into<String>) -> Self {
        Self {
            rule_id,
            description: description.into(),
            tags: Vec::new(),
        }
    }

    pub fn with_tags(mut self, tags: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    // Anything the line format can't carry verbatim is rejected so that
    // save followed by load is the identity.
    fn check(&self) -> Result<(), RulesError> {
        let bad = |message: &str| RulesError::InvalidRule {
            id: self.rule_id,
            message: message.to_string(),
        };
        if self.rule_id == 0 {
            return Err(bad("id must be at least 1"));
        }
        if self.rule_id == SENTINEL_ID {
            return Err(bad("id 99 is the reserved sentinel"));
        }
        if self.description.trim().is_empty() {
            return Err(bad("description is empty"));
        }
        if self.description != self.description.trim() || self.description.contains(['\n', '\r']) {
            return Err(bad("description must be a single trimmed line"));
        }
        for tag in &self.tags {
            if tag.is_empty() || tag != tag.trim() || tag.contains([',', '|', '\n', '\r']) {
                return Err(bad(
                    "tags must be non-empty and free of ',', '|' and line breaks",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCatalog {
    catalog_id: String,
    rules: Vec<ComplianceRule>,
}

impl RuleCatalog {
    pub fn new(
        catalog_id: impl Into<String>,
        rules: Vec<ComplianceRule>,
    ) -> Result<Self, RulesError> {
        let mut seen = BTreeMap::new();
        for (i, rule) in rules.iter().enumerate() {
            rule.check()?;
            if let Some(first) = seen.insert(rule.rule_id, i + 1) {
                return Err(RulesError::DuplicateId {
                    line: i + 1,
                    id: rule.rule_id,
                    first_line: first,
                });
            }
        }
        Ok(Self {
            catalog_id: catalog_id.into(),
            rules,
        })
    }

    pub fn empty(catalog_id: impl Into<String>) -> Self {
        Self {
            catalog_id: catalog_id.into(),
            rules: Vec::new(),
        }
    }

    pub fn catalog_id(&self) -> &str {
        &self.catalog_id
    }

    pub fn sentinel_id(&self) -> RuleId {
        SENTINEL_ID
    }

    pub fn rules(&self) -> &[ComplianceRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = RuleId> + '_ {
        self.rules.iter().map(|r| r.rule_id)
    }

    pub fn contains(&self, id: RuleId) -> bool {
        self.rules.iter().any(|r| r.rule_id == id)
    }

    pub fn get(&self, id: RuleId) -> Option<&ComplianceRule> {
        self.rules.iter().find(|r| r.rule_id == id)
    }

    pub fn parse(source: &str, default_id: &str) -> Result<Self, RulesError> {
        let mut catalog_id = default_id.to_string();
        let mut rules = Vec::new();
        let mut first_seen: BTreeMap<RuleId, usize> = BTreeMap::new();
        for (idx, line) in source.lines().enumerate() {
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("@catalog") {
                let id = rest.trim();
                if id.is_empty() || !rest.starts_with(char::is_whitespace) {
                    return Err(RulesError::Malformed {
                        line: lineno,
                        message: "expected `@catalog <id>`".into(),
                    });
                }
                catalog_id = id.to_string();
                continue;
            }
            let mut fields = trimmed.splitn(3, '|');
            let (Some(id_field), Some(tag_field), Some(desc_field)) =
                (fields.next(), fields.next(), fields.next())
            else {
                return Err(RulesError::Malformed {
                    line: lineno,
                    message: "expected `id | tags | description`".into(),
                });
            };
            let id: RuleId = id_field.trim().parse().map_err(|_| RulesError::Malformed {
                line: lineno,
                message: format!(
                    "rule id {:?} is not a non-negative integer",
                    id_field.trim()
                ),
            })?;
            if id == 0 {
                return Err(RulesError::ZeroId { line: lineno });
            }
            if id == SENTINEL_ID {
                return Err(RulesError::SentinelId { line: lineno });
            }
            if let Some(&first_line) = first_seen.get(&id) {
                return Err(RulesError::DuplicateId {
                    line: lineno,
                    id,
                    first_line,
                });
            }
            first_seen.insert(id, lineno);
            let description = desc_field.trim();
            if description.is_empty() {
                return Err(RulesError::EmptyDescription { line: lineno, id });
            }
            let tags: Vec<String> = tag_field
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(String::from)
                .collect();
            rules.push(ComplianceRule {
                rule_id: id,
                description: description.to_string(),
                tags,
            });
        }
        Self::new(catalog_id, rules)
    }

    /// Serializes to the catalog file format.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("@catalog {}\n", self.catalog_id);
        for rule in &self.rules {
            let _ = writeln!(
                out,
                "{} | {} | {}",
                rule.rule_id,
                rule.tags.join(","),
                rule.description
            );
        }
        out
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<RuleCatalog, RulesError> {
    let path = path.as_ref();
    let source = std::fs::read_to_string(path).map_err(|e| RulesError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RuleCatalog::parse(&source, &stem)
}

pub fn save_catalog(catalog: &RuleCatalog, path: impl AsRef<Path>) -> Result<(), RulesError> {
    let path = path.as_ref();
    std::fs::write(path, catalog.to_file_string()).map_err(|e| RulesError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// The "Compliance Rules" prompt section: one `R<id>: <description>` line per
/// rule in catalog order, then the sentinel line. No trailing newline.
pub fn render_rules(catalog: &RuleCatalog) -> String {
    let mut out = String::new();
    for rule in &catalog.rules {
        let _ = writeln!(out, "R{}: {}", rule.rule_id, rule.description);
    }
    out.push_str(SENTINEL_LINE);
    out
}

use std::sync::OnceLock;

use regex::Regex;

use super::HeadingConfig;

fn numbering_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:\d+\.(?:\d+\.?)*\s+\S|\d+\.\d+(?:\.\d+)*\s*$|(?i:annex|appendix|schedule|article|section|clause|part)\s+(?:[IVXLCDM]+|\d+)\b)",
        )
        .expect("numbering pattern compiles")
    })
}

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201D}', '\u{2019}'];

pub(crate) fn ends_with_terminal_punctuation(line: &str) -> bool {
    let stripped = line.trim_end().trim_end_matches(CLOSERS);
    stripped.ends_with(['.', '!', '?'])
}

/// Whether a (trimmed) line reads as a section heading.
pub(crate) fn is_heading(line: &str, cfg: &HeadingConfig) -> bool {
    let line = line.trim();
    if line.is_empty() || line.chars().count() > cfg.max_len {
        return false;
    }
    if cfg.numbering && numbering_pattern().is_match(line) {
        return true;
    }
    if cfg.exclude_terminal_punctuation && ends_with_terminal_punctuation(line) {
        return false;
    }
    let mut words = 0usize;
    let mut capitalized = 0usize;
    for word in line.split_whitespace() {
        let Some(first_alpha) = word.chars().find(|c| c.is_alphabetic()) else {
            continue;
        };
        words += 1;
        if first_alpha.is_uppercase() {
            capitalized += 1;
        }
    }
    words > 0 && (capitalized as f64) >= cfg.min_capitalized_ratio * (words as f64)
}

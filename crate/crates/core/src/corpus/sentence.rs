//! Rule-based sentence boundary detection.

use super::heading;
use super::ChunkConfig;

const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201C}', '\u{2018}'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201D}', '\u{2019}'];

/// Default abbreviations that never end a sentence. Matched case-insensitively
/// against the whitespace-delimited word carrying the period.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "cf.", "vs.", "viz.", "approx.", "art.", "arts.", "no.", "nos.",
    "para.", "paras.", "sec.", "p.", "pp.", "fig.", "mr.", "mrs.", "ms.", "dr.", "prof.", "inc.",
    "ltd.", "co.", "corp.", "st.", "jr.", "sr.",
];

/// Half-open byte spans of the sentences in `text`, trimmed of surrounding
/// whitespace. Together they cover every non-whitespace character of `text`.
pub(crate) fn sentence_spans(text: &str, cfg: &ChunkConfig) -> Vec<(usize, usize)> {
    let mut cuts = Vec::new();
    collect_heading_cuts(text, cfg, &mut cuts);
    collect_punctuation_cuts(text, cfg, &mut cuts);
    cuts.sort_unstable();
    cuts.dedup();

    let mut spans = Vec::new();
    let mut start = 0;
    for cut in cuts.into_iter().chain(std::iter::once(text.len())) {
        if let Some(span) = trim_span(text, start, cut) {
            spans.push(span);
        }
        start = cut;
    }
    spans
}

fn trim_span(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        return None;
    }
    let s = start + lead;
    Some((s, s + trimmed.len()))
}

// A heading line inside a paragraph stands as its own sentence.
fn collect_heading_cuts(text: &str, cfg: &ChunkConfig, cuts: &mut Vec<usize>) {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let end = offset + line.len();
        if heading::is_heading(line, &cfg.heading) {
            cuts.push(offset);
            cuts.push(end);
        }
        offset = end;
    }
}

fn collect_punctuation_cuts(text: &str, cfg: &ChunkConfig, cuts: &mut Vec<usize>) {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        // Extend over runs like "?!" or '."' or ".)".
        let mut j = i + 1;
        while j < chars.len()
            && (matches!(chars[j].1, '.' | '!' | '?') || CLOSERS.contains(&chars[j].1))
        {
            j += 1;
        }
        let boundary = chars.get(j).map_or(text.len(), |(p, _)| *p);
        let next_is_space = chars.get(j).is_some_and(|(_, ch)| ch.is_whitespace());
        if !next_is_space {
            i = j;
            continue;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        while k < chars.len() && OPENERS.contains(&chars[k].1) {
            k += 1;
        }
        let starts_sentence = chars
            .get(k)
            .is_some_and(|(_, ch)| ch.is_uppercase() || ch.is_ascii_digit());
        if starts_sentence && !is_non_terminal(text, pos, boundary, cfg) {
            cuts.push(boundary);
        }
        i = j;
    }
}

// The word holding the punctuation at `punct_pos` is an abbreviation, an
// initial, or a leading list number.
fn is_non_terminal(text: &str, punct_pos: usize, boundary: usize, cfg: &ChunkConfig) -> bool {
    let word_start = text[..punct_pos]
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(0, |(p, c)| p + c.len_utf8());
    let word = text[word_start..boundary].trim_end_matches(CLOSERS);
    let word = word.trim_start_matches(OPENERS);
    if !word.ends_with('.') {
        return false;
    }
    let lower = word.to_lowercase();
    if cfg.abbreviations.iter().any(|a| a.to_lowercase() == lower) {
        return true;
    }
    let body = &word[..word.len() - 1];
    // Single-letter initial such as "J."
    if body.chars().count() == 1 && body.chars().all(char::is_alphabetic) {
        return true;
    }
    let at_line_start = text[..word_start].trim_end_matches([' ', '\t']).is_empty()
        || text[..word_start]
            .trim_end_matches([' ', '\t'])
            .ends_with('\n');
    at_line_start && !body.is_empty() && body.chars().all(|c| c.is_ascii_digit() || c == '.')
}

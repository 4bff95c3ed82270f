//! Ingestion and segmentation of regulatory artifacts into passages.
//!
//! Spans are half-open byte offsets into the artifact's *normalized* text
//! (CRLF folded to LF). For LF-only input the normalized text is the raw
//! text; otherwise [`RegulatoryArtifact::raw_span`] maps a span back onto the
//! bytes as read from disk.

mod heading;
mod sentence;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::TokenCounter;

pub use sentence::DEFAULT_ABBREVIATIONS;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document id must be non-empty and free of commas and line breaks: {0:?}")]
    InvalidDocId(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8")]
    NotUtf8 { path: String },
    #[error("invalid chunk configuration: {0}")]
    InvalidConfig(String),
    #[error("passage {0} is not a paragraph")]
    NotAParagraph(String),
    #[error("passage {passage_id} has {tokens} tokens, over the limit of {limit}")]
    OverLimit {
        passage_id: String,
        tokens: usize,
        limit: usize,
    },
    #[error(
        "first sentence of passage {passage_id} has {tokens} tokens, over the limit of {limit}"
    )]
    SentenceOverLimit {
        passage_id: String,
        tokens: usize,
        limit: usize,
    },
    #[error("span bookkeeping violated: {0}")]
    Invariant(String),
}

/// A document submitted for checking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegulatoryArtifact {
    doc_id: String,
    title: String,
    raw_text: String,
    source_path: String,
    text: String,
    // Positions in `text` of every LF that was preceded by a CR in `raw_text`.
    folded_crlf: Vec<usize>,
}

impl RegulatoryArtifact {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        raw_text: impl Into<String>,
        source_path: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        if doc_id.trim().is_empty() || doc_id.contains([',', '\n', '\r']) || doc_id != doc_id.trim()
        {
            return Err(CorpusError::InvalidDocId(doc_id));
        }
        let raw_text = raw_text.into();
        let mut text = String::with_capacity(raw_text.len());
        let mut folded_crlf = Vec::new();
        let mut rest = raw_text.as_str();
        while let Some(idx) = rest.find("\r\n") {
            text.push_str(&rest[..idx]);
            folded_crlf.push(text.len());
            text.push('\n');
            rest = &rest[idx + 2..];
        }
        text.push_str(rest);
        Ok(Self {
            doc_id,
            title: title.into(),
            raw_text,
            source_path: source_path.into(),
            text,
            folded_crlf,
        })
    }

    /// Reads a UTF-8 text file. The doc id is the file stem and the title the
    /// first non-blank line.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        let raw = String::from_utf8(bytes).map_err(|_| CorpusError::NotUtf8 {
            path: display.clone(),
        })?;
        let doc_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().replace([',', ' '], "_"))
            .unwrap_or_default();
        let title = raw
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("")
            .chars()
            .take(120)
            .collect::<String>();
        Self::new(doc_id, title, raw, display)
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    /// The bytes exactly as ingested.
    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    /// Line-ending-normalized text that passage spans index into.
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn raw_offset(&self, normalized: usize) -> usize {
        normalized + self.folded_crlf.partition_point(|&p| p < normalized)
    }

    pub fn raw_span(&self, span: Span) -> Span {
        Span {
            start: self.raw_offset(span.start),
            end: self.raw_offset(span.end),
        }
    }

    pub fn slice(&self, span: Span) -> &str {
        &self.text[span.start..span.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Sentence,
    Paragraph,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Sentence => "sentence",
            Granularity::Paragraph => "paragraph",
        }
    }

    fn tag(self) -> char {
        match self {
            Granularity::Sentence => 's',
            Granularity::Paragraph => 'p',
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open byte range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub granularity: Granularity,
    pub text: String,
    pub span: Span,
    pub ordinal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_paragraph_id: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

/// Content-addressed id: stable across runs for the same document and span.
pub fn passage_id(doc_id: &str, granularity: Granularity, span: Span) -> String {
    let mut hasher = Sha256::new();
    hasher.update(doc_id.as_bytes());
    hasher.update([0]);
    hasher.update(granularity.as_str().as_bytes());
    hasher.update([0]);
    hasher.update((span.start as u64).to_le_bytes());
    hasher.update((span.end as u64).to_le_bytes());
    let digest = hasher.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("{doc_id}:{}:{hex}", granularity.tag())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadingConfig {
    /// Longest line, in characters, that may be a heading.
    pub max_len: usize,
    /// Accept "9.", "9.2", "Annex II" style numbering as a heading marker.
    pub numbering: bool,
    /// Lines ending in `.`, `!` or `?` are never capitalization headings.
    pub exclude_terminal_punctuation: bool,
    /// Share of alphabetic words that must start uppercase.
    pub min_capitalized_ratio: f64,
}

impl Default for HeadingConfig {
    fn default() -> Self {
        Self {
            max_len: 80,
            numbering: true,
            exclude_terminal_punctuation: true,
            min_capitalized_ratio: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParagraphDelimiter {
    /// Only blank lines separate paragraphs.
    BlankLine,
    /// Blank lines, and a line break directly followed by a heading.
    BlankLineOrHeading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationPolicy {
    TruncateAtSentenceBoundary,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkConfig {
    pub heading: HeadingConfig,
    pub delimiter: ParagraphDelimiter,
    pub token_limit: usize,
    pub truncation: TruncationPolicy,
    pub abbreviations: Vec<String>,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            heading: HeadingConfig::default(),
            delimiter: ParagraphDelimiter::BlankLineOrHeading,
            token_limit: 4096,
            truncation: TruncationPolicy::TruncateAtSentenceBoundary,
            abbreviations: DEFAULT_ABBREVIATIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.token_limit == 0 {
            return Err(CorpusError::InvalidConfig(
                "token_limit must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.heading.min_capitalized_ratio) {
            return Err(CorpusError::InvalidConfig(
                "heading.min_capitalized_ratio must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    end: usize,
    headings_only: bool,
}

/// Splits an artifact into paragraph passages.
pub fn chunk_paragraphs(
    artifact: &RegulatoryArtifact,
    cfg: &ChunkConfig,
) -> Result<Vec<Passage>, CorpusError> {
    cfg.validate()?;
    let text = artifact.text();
    let split_on_headings = cfg.delimiter == ParagraphDelimiter::BlankLineOrHeading;

    let mut blocks: Vec<Block> = Vec::new();
    let mut current: Option<Block> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() {
            blocks.extend(current.take());
            continue;
        }
        let is_heading = split_on_headings && heading::is_heading(trimmed, &cfg.heading);
        if is_heading && current.is_some_and(|b| !b.headings_only) {
            blocks.extend(current.take());
        }
        let content_start = line_start + (line.len() - line.trim_start().len());
        let content_end = content_start + trimmed.len();
        current = Some(match current {
            Some(b) => Block {
                start: b.start,
                end: content_end,
                headings_only: b.headings_only && is_heading,
            },
            None => Block {
                start: content_start,
                end: content_end,
                headings_only: is_heading,
            },
        });
    }
    blocks.extend(current.take());

    // A heading separated from its body by blank lines still belongs to it.
    let mut merged: Vec<Block> = Vec::with_capacity(blocks.len());
    let mut pending: Option<Block> = None;
    for block in blocks {
        if block.headings_only && split_on_headings {
            pending = Some(match pending {
                Some(p) => Block {
                    end: block.end,
                    ..p
                },
                None => block,
            });
            continue;
        }
        let start = pending.take().map_or(block.start, |p| p.start);
        merged.push(Block { start, ..block });
    }
    merged.extend(pending);

    let passages: Vec<Passage> = merged
        .into_iter()
        .enumerate()
        .map(|(ordinal, b)| {
            let span = Span::new(b.start, b.end);
            Passage {
                passage_id: passage_id(artifact.doc_id(), Granularity::Paragraph, span),
                doc_id: artifact.doc_id().to_string(),
                granularity: Granularity::Paragraph,
                text: text[b.start..b.end].to_string(),
                span,
                ordinal,
                parent_paragraph_id: None,
                truncated: false,
            }
        })
        .collect();
    check_stream(text, &passages)?;
    Ok(passages)
}

/// Splits a paragraph passage into sentence passages.
pub fn split_sentences(
    paragraph: &Passage,
    cfg: &ChunkConfig,
) -> Result<Vec<Passage>, CorpusError> {
    if paragraph.granularity != Granularity::Paragraph {
        return Err(CorpusError::NotAParagraph(paragraph.passage_id.clone()));
    }
    Ok(sentence::sentence_spans(&paragraph.text, cfg)
        .into_iter()
        .enumerate()
        .map(|(ordinal, (s, e))| {
            let span = Span::new(paragraph.span.start + s, paragraph.span.start + e);
            Passage {
                passage_id: passage_id(&paragraph.doc_id, Granularity::Sentence, span),
                doc_id: paragraph.doc_id.clone(),
                granularity: Granularity::Sentence,
                text: paragraph.text[s..e].to_string(),
                span,
                ordinal,
                parent_paragraph_id: Some(paragraph.passage_id.clone()),
                truncated: false,
            }
        })
        .collect())
}

/// Paragraphs and sentences of one artifact. Sentence ordinals run across
/// the whole document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkedDocument {
    pub doc_id: String,
    pub paragraphs: Vec<Passage>,
    pub sentences: Vec<Passage>,
}

impl ChunkedDocument {
    pub fn passages(&self, granularity: Granularity) -> &[Passage] {
        match granularity {
            Granularity::Paragraph => &self.paragraphs,
            Granularity::Sentence => &self.sentences,
        }
    }

    pub fn find(&self, passage_id: &str) -> Option<&Passage> {
        self.paragraphs
            .iter()
            .chain(&self.sentences)
            .find(|p| p.passage_id == passage_id)
    }

    pub fn parent_of(&self, sentence: &Passage) -> Option<&Passage> {
        let parent = sentence.parent_paragraph_id.as_deref()?;
        self.paragraphs.iter().find(|p| p.passage_id == parent)
    }
}

pub fn chunk_document(
    artifact: &RegulatoryArtifact,
    cfg: &ChunkConfig,
) -> Result<ChunkedDocument, CorpusError> {
    let paragraphs = chunk_paragraphs(artifact, cfg)?;
    let mut sentences = Vec::new();
    for paragraph in &paragraphs {
        for mut s in split_sentences(paragraph, cfg)? {
            s.ordinal = sentences.len();
            sentences.push(s);
        }
    }
    check_stream(artifact.text(), &sentences)?;
    Ok(ChunkedDocument {
        doc_id: artifact.doc_id().to_string(),
        paragraphs,
        sentences,
    })
}

/// Applies the token limit and truncation policy to one passage.
///
/// Truncation keeps the passage id and drops whole trailing sentences; the
/// first sentence is never cut inside.
pub fn enforce_token_limit(
    passage: &Passage,
    cfg: &ChunkConfig,
    counter: &dyn TokenCounter,
) -> Result<Passage, CorpusError> {
    cfg.validate()?;
    let limit = cfg.token_limit;
    let tokens = counter.count(&passage.text);
    if tokens <= limit {
        return Ok(passage.clone());
    }
    if cfg.truncation == TruncationPolicy::Reject {
        return Err(CorpusError::OverLimit {
            passage_id: passage.passage_id.clone(),
            tokens,
            limit,
        });
    }
    let spans = sentence::sentence_spans(&passage.text, cfg);
    let mut keep_end = None;
    for (start, end) in &spans {
        let prefix = &passage.text[spans[0].0..*end];
        let count = counter.count(prefix);
        if count > limit {
            if keep_end.is_none() {
                return Err(CorpusError::SentenceOverLimit {
                    passage_id: passage.passage_id.clone(),
                    tokens: counter.count(&passage.text[*start..*end]),
                    limit,
                });
            }
            break;
        }
        keep_end = Some(*end);
    }
    let keep_end = keep_end.expect("loop exits early when nothing fits");
    let mut out = passage.clone();
    out.text = passage.text[..keep_end].to_string();
    out.span.end = passage.span.start + keep_end;
    out.truncated = true;
    Ok(out)
}

// Ordered, non-overlapping, non-empty, trimmed, and matching the source.
fn check_stream(text: &str, passages: &[Passage]) -> Result<(), CorpusError> {
    let mut prev_end = 0;
    for (i, p) in passages.iter().enumerate() {
        let Span { start, end } = p.span;
        if start >= end || end > text.len() {
            return Err(CorpusError::Invariant(format!(
                "passage {} has span {start}..{end}",
                p.passage_id
            )));
        }
        if i > 0 && start < prev_end {
            return Err(CorpusError::Invariant(format!(
                "passage {} overlaps its predecessor",
                p.passage_id
            )));
        }
        if text.get(start..end) != Some(p.text.as_str()) {
            return Err(CorpusError::Invariant(format!(
                "passage {} text differs from source",
                p.passage_id
            )));
        }
        prev_end = end;
    }
    Ok(())
}

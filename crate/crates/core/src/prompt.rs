//! Chat prompt construction.
//!
//! # Template files
//!
//! A template is plain UTF-8 text split into sections by directive lines:
//!
//! ```text
//! @template <id>
//! @variant sentence_level | paragraph_level
//! @system
//! ...instructions, must contain {{rules}} once...
//! @user
//! ...must contain {{passage}} once, and {{context}} once for paragraph_level...
//! @format
//! ...answer-format instructions appended to the system message...
//! ```
//!
//! Lines before the first directive that start with `#` are comments. Inside a
//! section a line starting with `@@` stands for a literal line starting with
//! `@`, and `\{{` produces a literal `{{` that is never treated as a
//! placeholder. The newline before each directive belongs to the directive.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Granularity, Passage};
use crate::rules::{render_rules, RuleCatalog};

const SENTENCE_TEMPLATE: &str = include_str!("../templates/sentence_level.tmpl");
const PARAGRAPH_TEMPLATE: &str = include_str!("../templates/paragraph_level.tmpl");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("failed to read template {path}: {message}")]
    Io { path: String, message: String },
    #[error("template line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("placeholder {{{{{name}}}}} cannot be resolved in the {section} section")]
    UnresolvedPlaceholder { name: String, section: &'static str },
    #[error("placeholder {{{{{name}}}}} must appear exactly once, found {count}")]
    PlaceholderCount { name: &'static str, count: usize },
    #[error("context mismatch: {0}")]
    ContextMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateVariant {
    SentenceLevel,
    ParagraphLevel,
}

impl TemplateVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateVariant::SentenceLevel => "sentence_level",
            TemplateVariant::ParagraphLevel => "paragraph_level",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "sentence_level" => Some(TemplateVariant::SentenceLevel),
            "paragraph_level" => Some(TemplateVariant::ParagraphLevel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Rules,
    Passage,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    template_id: String,
    variant: TemplateVariant,
    system: Vec<Segment>,
    user: Vec<Segment>,
    output_format_instructions: String,
}

impl PromptTemplate {
    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    pub fn variant(&self) -> TemplateVariant {
        self.variant
    }

    pub fn output_format_instructions(&self) -> &str {
        &self.output_format_instructions
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&source)
    }

    pub fn parse(source: &str) -> Result<Self, PromptError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Section {
            Preamble,
            System,
            User,
            Format,
        }
        let mut template_id = None;
        let mut variant = None;
        let mut section = Section::Preamble;
        let mut bodies: [Option<Vec<&str>>; 3] = [None, None, None];
        let mut section_line = [0usize; 3];

        for (idx, line) in source.lines().enumerate() {
            let lineno = idx + 1;
            let directive = line.strip_prefix('@').filter(|rest| !rest.starts_with('@'));
            match directive {
                Some(rest) => {
                    let (name, arg) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                    let arg = arg.trim();
                    let syntax = |message: String| PromptError::Syntax {
                        line: lineno,
                        message,
                    };
                    match name.trim() {
                        "template" if !arg.is_empty() => template_id = Some(arg.to_string()),
                        "variant" => {
                            variant = Some(
                                TemplateVariant::parse(arg)
                                    .ok_or_else(|| syntax(format!("unknown variant {arg:?}")))?,
                            )
                        }
                        s @ ("system" | "user" | "format") => {
                            let (next, slot) = match s {
                                "system" => (Section::System, 0),
                                "user" => (Section::User, 1),
                                _ => (Section::Format, 2),
                            };
                            if bodies[slot].is_some() {
                                return Err(syntax(format!("duplicate @{s} section")));
                            }
                            bodies[slot] = Some(Vec::new());
                            section_line[slot] = lineno;
                            section = next;
                        }
                        other => {
                            return Err(syntax(format!("unknown or incomplete directive @{other}")))
                        }
                    }
                }
                None => {
                    let slot = match section {
                        Section::Preamble => {
                            if line.trim().is_empty() || line.starts_with('#') {
                                continue;
                            }
                            return Err(PromptError::Syntax {
                                line: lineno,
                                message: "text outside of a section".into(),
                            });
                        }
                        Section::System => 0,
                        Section::User => 1,
                        Section::Format => 2,
                    };
                    let line = if line.starts_with("@@") {
                        &line[1..]
                    } else {
                        line
                    };
                    bodies[slot].as_mut().expect("section opened").push(line);
                }
            }
        }

        let missing = |what: &str| PromptError::Syntax {
            line: source.lines().count(),
            message: format!("missing {what}"),
        };
        let template_id = template_id.ok_or_else(|| missing("@template"))?;
        let variant = variant.ok_or_else(|| missing("@variant"))?;
        let [system, user, format] = bodies;
        let system = system.ok_or_else(|| missing("@system section"))?.join("\n");
        let user = user.ok_or_else(|| missing("@user section"))?.join("\n");
        let format = format.ok_or_else(|| missing("@format section"))?.join("\n");

        let system = parse_segments(&system, "system")?;
        let user = parse_segments(&user, "user")?;
        let format_segments = parse_segments(&format, "format")?;
        if let Some(name) = format_segments.iter().find_map(placeholder_name) {
            return Err(PromptError::UnresolvedPlaceholder {
                name: name.into(),
                section: "format",
            });
        }
        let output_format_instructions = concat_text(&format_segments);

        let template = PromptTemplate {
            template_id,
            variant,
            system,
            user,
            output_format_instructions,
        };
        template.validate()?;
        Ok(template)
    }

    /// Every declared placeholder appears exactly once, each in its own
    /// section; `{{context}}` only in the paragraph variant.
    pub fn validate(&self) -> Result<(), PromptError> {
        let count = |segs: &[Segment], want: &Segment| segs.iter().filter(|s| *s == want).count();
        if let Some(name) = self
            .system
            .iter()
            .filter(|s| !matches!(s, Segment::Rules))
            .find_map(placeholder_name)
        {
            return Err(PromptError::UnresolvedPlaceholder {
                name: name.into(),
                section: "system",
            });
        }
        if let Some(name) = self
            .user
            .iter()
            .filter(|s| matches!(s, Segment::Rules))
            .find_map(placeholder_name)
        {
            return Err(PromptError::UnresolvedPlaceholder {
                name: name.into(),
                section: "user",
            });
        }
        let checks: [(&'static str, usize, usize); 3] = [
            ("rules", count(&self.system, &Segment::Rules), 1),
            ("passage", count(&self.user, &Segment::Passage), 1),
            (
                "context",
                count(&self.user, &Segment::Context),
                usize::from(self.variant == TemplateVariant::ParagraphLevel),
            ),
        ];
        for (name, found, want) in checks {
            if found != want {
                return Err(PromptError::PlaceholderCount { name, count: found });
            }
        }
        Ok(())
    }
}

fn placeholder_name(seg: &Segment) -> Option<&'static str> {
    match seg {
        Segment::Text(_) => None,
        Segment::Rules => Some("rules"),
        Segment::Passage => Some("passage"),
        Segment::Context => Some("context"),
    }
}

fn concat_text(segs: &[Segment]) -> String {
    segs.iter()
        .map(|s| match s {
            Segment::Text(t) => t.as_str(),
            _ => "",
        })
        .collect()
}

fn parse_segments(body: &str, section: &'static str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("\\{{") {
            text.push_str("{{");
            rest = after;
        } else if let Some(after) = rest.strip_prefix("{{") {
            let Some(close) = after.find("}}") else {
                return Err(PromptError::UnresolvedPlaceholder {
                    name: after.chars().take(20).collect(),
                    section,
                });
            };
            let name = after[..close].trim();
            let seg = match name {
                "rules" => Segment::Rules,
                "passage" => Segment::Passage,
                "context" => Segment::Context,
                other => {
                    return Err(PromptError::UnresolvedPlaceholder {
                        name: other.to_string(),
                        section,
                    })
                }
            };
            if !text.is_empty() {
                segments.push(Segment::Text(std::mem::take(&mut text)));
            }
            segments.push(seg);
            rest = &after[close + 2..];
        } else {
            let ch = rest.chars().next().expect("non-empty");
            text.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
    }
    if !text.is_empty() {
        segments.push(Segment::Text(text));
    }
    Ok(segments)
}

/// The shipped (sentence-level, paragraph-level) templates.
pub fn default_templates() -> (PromptTemplate, PromptTemplate) {
    (
        PromptTemplate::parse(SENTENCE_TEMPLATE).expect("shipped sentence template is valid"),
        PromptTemplate::parse(PARAGRAPH_TEMPLATE).expect("shipped paragraph template is valid"),
    )
}

pub fn default_template(variant: TemplateVariant) -> PromptTemplate {
    let (s, p) = default_templates();
    match variant {
        TemplateVariant::SentenceLevel => s,
        TemplateVariant::ParagraphLevel => p,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMetadata {
    pub passage_id: String,
    pub template_id: String,
    pub catalog_id: String,
    pub variant: TemplateVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_passage_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPrompt {
    messages: Vec<ChatMessage>,
    metadata: PromptMetadata,
}

impl ChatPrompt {
    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn metadata(&self) -> &PromptMetadata {
        &self.metadata
    }

    pub fn passage_id(&self) -> &str {
        &self.metadata.passage_id
    }

    pub fn system(&self) -> &str {
        &self.messages[0].content
    }

    pub fn user(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .expect("a prompt always carries one user message")
    }

    /// Human-readable dump: one `### role` header per message.
    pub fn render_transcript(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str("### ");
            out.push_str(m.role.as_str());
            out.push('\n');
            out.push_str(&m.content);
            out.push_str("\n\n");
        }
        out
    }
}

/// Builds the system + user messages for one target passage.
///
/// With a paragraph-level template `context` must be the paragraph, and the
/// target is either that paragraph or one of its sentences.
pub fn build_prompt(
    template: &PromptTemplate,
    catalog: &RuleCatalog,
    target: &Passage,
    context: Option<&Passage>,
) -> Result<ChatPrompt, PromptError> {
    template.validate()?;
    match (template.variant, context) {
        (TemplateVariant::SentenceLevel, Some(_)) => {
            return Err(PromptError::ContextMismatch(
                "a sentence-level template takes no context".into(),
            ))
        }
        (TemplateVariant::ParagraphLevel, None) => {
            return Err(PromptError::ContextMismatch(
                "a paragraph-level template needs the enclosing paragraph".into(),
            ))
        }
        (TemplateVariant::ParagraphLevel, Some(ctx)) => {
            if ctx.granularity != Granularity::Paragraph {
                return Err(PromptError::ContextMismatch(format!(
                    "context {} is not a paragraph",
                    ctx.passage_id
                )));
            }
            let is_self = target.passage_id == ctx.passage_id;
            let is_child = target.granularity == Granularity::Sentence
                && target.parent_paragraph_id.as_deref() == Some(ctx.passage_id.as_str());
            if !is_self && !is_child {
                return Err(PromptError::ContextMismatch(format!(
                    "target {} is neither paragraph {} nor one of its sentences",
                    target.passage_id, ctx.passage_id
                )));
            }
        }
        (TemplateVariant::SentenceLevel, None) => {}
    }

    let rules = render_rules(catalog);
    let expand = |segs: &[Segment]| -> String {
        let mut out = String::new();
        for seg in segs {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Rules => out.push_str(&rules),
                Segment::Passage => out.push_str(&target.text),
                Segment::Context => out.push_str(&context.expect("validated above").text),
            }
        }
        out
    };

    let mut system = expand(&template.system);
    if !template.output_format_instructions.is_empty() {
        system.push_str("\n\n");
        system.push_str(&template.output_format_instructions);
    }
    let user = expand(&template.user);
    Ok(ChatPrompt {
        messages: vec![
            ChatMessage {
                role: Role::System,
                content: system,
            },
            ChatMessage {
                role: Role::User,
                content: user,
            },
        ],
        metadata: PromptMetadata {
            passage_id: target.passage_id.clone(),
            template_id: template.template_id.clone(),
            catalog_id: catalog.catalog_id().to_string(),
            variant: template.variant,
            context_passage_id: context.map(|c| c.passage_id.clone()),
        },
    })
}

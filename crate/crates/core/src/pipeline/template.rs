//! Prompt templates: UTF-8 text with `{placeholder}` substitution.
//!
//! `{{` and `}}` produce literal braces. A placeholder outside a template's
//! allowed set is rejected when the template is loaded, never at render time.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::digest::Digest;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder {{{name}}} at byte {offset}")]
    UnknownPlaceholder {
        template: String,
        name: String,
        offset: usize,
    },
    #[error("template {template}: unclosed '{{' at byte {offset}")]
    Unclosed { template: String, offset: usize },
    #[error("template {template}: invalid placeholder name '{name}' at byte {offset}")]
    InvalidName {
        template: String,
        name: String,
        offset: usize,
    },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone)]
pub struct Template {
    name: String,
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(name: &str, source: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source.char_indices().peekable();
        while let Some((offset, c)) = rest.next() {
            match c {
                '{' if matches!(rest.peek(), Some((_, '{'))) => {
                    rest.next();
                    literal.push('{');
                }
                '}' if matches!(rest.peek(), Some((_, '}'))) => {
                    rest.next();
                    literal.push('}');
                }
                '{' => {
                    let mut ident = String::new();
                    let mut closed = false;
                    for (_, c) in rest.by_ref() {
                        if c == '}' {
                            closed = true;
                            break;
                        }
                        ident.push(c);
                    }
                    if !closed {
                        return Err(TemplateError::Unclosed {
                            template: name.into(),
                            offset,
                        });
                    }
                    if ident.is_empty()
                        || !ident.chars().all(|c| c.is_ascii_lowercase() || c == '_')
                    {
                        return Err(TemplateError::InvalidName {
                            template: name.into(),
                            name: ident,
                            offset,
                        });
                    }
                    if !allowed.contains(&ident.as_str()) {
                        return Err(TemplateError::UnknownPlaceholder {
                            template: name.into(),
                            name: ident,
                            offset,
                        });
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(ident));
                }
                c => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self {
            name: name.into(),
            source: source.into(),
            segments,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Placeholders missing from `values` render as empty text.
    pub fn render(&self, values: &HashMap<&str, String>) -> String {
        let mut out = String::with_capacity(self.source.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Placeholder(name) => {
                    if let Some(value) = values.get(name.as_str()) {
                        out.push_str(value);
                    }
                }
            }
        }
        out
    }
}

pub const CURRICULUM_PLACEHOLDERS: &[&str] = &[
    "course_title",
    "course_description",
    "sections",
    "section_ids",
    "persona",
    "persona_interests",
    "persona_goals",
    "output_schema",
];

pub const CONTENT_PLACEHOLDERS: &[&str] = &[
    "course_title",
    "section_title",
    "subsection_title",
    "personalized_title",
    "personalized_summary",
    "analogy_theme",
    "scope",
    "learning_goals",
    "canonical_body",
    "example_exercises",
    "persona",
    "persona_interests",
    "persona_goals",
    "output_schema",
];

const DEFAULT_CURRICULUM_SYSTEM: &str = include_str!("../../templates/curriculum_system.txt");
const DEFAULT_CURRICULUM_USER: &str = include_str!("../../templates/curriculum_user.txt");
const DEFAULT_CONTENT_SYSTEM: &str = include_str!("../../templates/content_system.txt");
const DEFAULT_CONTENT_USER: &str = include_str!("../../templates/content_user.txt");

/// The four templates driving both generation stages.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub curriculum_system: Template,
    pub curriculum_user: Template,
    pub content_system: Template,
    pub content_user: Template,
    digest: Digest,
}

impl TemplateSet {
    pub fn new(
        curriculum_system: &str,
        curriculum_user: &str,
        content_system: &str,
        content_user: &str,
    ) -> Result<Self, TemplateError> {
        let digest = Digest::of_parts([
            curriculum_system,
            curriculum_user,
            content_system,
            content_user,
        ]);
        Ok(Self {
            curriculum_system: Template::parse(
                "curriculum_system",
                curriculum_system,
                CURRICULUM_PLACEHOLDERS,
            )?,
            curriculum_user: Template::parse(
                "curriculum_user",
                curriculum_user,
                CURRICULUM_PLACEHOLDERS,
            )?,
            content_system: Template::parse("content_system", content_system, CONTENT_PLACEHOLDERS)?,
            content_user: Template::parse("content_user", content_user, CONTENT_PLACEHOLDERS)?,
            digest,
        })
    }

    pub fn defaults() -> Self {
        Self::new(
            DEFAULT_CURRICULUM_SYSTEM,
            DEFAULT_CURRICULUM_USER,
            DEFAULT_CONTENT_SYSTEM,
            DEFAULT_CONTENT_USER,
        )
        .expect("built-in templates are valid")
    }

    /// Loads `<name>.txt` for each of the four templates from `dir`; files
    /// that do not exist fall back to the built-in default.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str, default: &str| -> Result<String, TemplateError> {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => Ok(text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(default.to_string()),
                Err(source) => Err(TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                }),
            }
        };
        Self::new(
            &read("curriculum_system", DEFAULT_CURRICULUM_SYSTEM)?,
            &read("curriculum_user", DEFAULT_CURRICULUM_USER)?,
            &read("content_system", DEFAULT_CONTENT_SYSTEM)?,
            &read("content_user", DEFAULT_CONTENT_USER)?,
        )
    }

    /// Digest over the four template sources; part of every prompt hash.
    pub fn digest(&self) -> &Digest {
        &self.digest
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::defaults()
    }
}

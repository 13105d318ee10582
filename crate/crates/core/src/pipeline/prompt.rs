//! Prompt bundles for the two generation stages.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::template::TemplateSet;
use super::PipelineError;
use crate::course_io::to_canonical_json;
use crate::digest::Digest;
use crate::model::{
    derive_persona_key, validate_course, Course, CurriculumState, Persona, PersonalizedCurriculum,
    Section, ValidationMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    /// Only used when replaying an invalid answer in a repair turn.
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    /// The provider is told to emit a single JSON object.
    #[default]
    JsonObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub response_format: ResponseFormat,
}

pub const DEFAULT_MODEL_ID: &str = "gpt-4";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL_ID.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            response_format: ResponseFormat::JsonObject,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return Err("max_output_tokens must be positive".into());
        }
        if self.model_id.trim().is_empty() {
            return Err("model_id must not be empty".into());
        }
        Ok(())
    }
}

/// The exact messages and parameters sent to a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub messages: Vec<ChatMessage>,
    pub params: GenerationParams,
    pub prompt_hash: Digest,
}

impl PromptBundle {
    /// `salt` is mixed into the hash; callers pass the template set digest.
    pub fn new(
        messages: Vec<ChatMessage>,
        params: GenerationParams,
        salt: &Digest,
    ) -> Result<Self, PipelineError> {
        params.validate().map_err(PipelineError::InvalidParams)?;
        let has = |role| messages.iter().any(|m| m.role == role);
        if !has(Role::System) || !has(Role::User) {
            return Err(PipelineError::InvalidParams(
                "a prompt needs at least one system and one user message".into(),
            ));
        }
        let prompt_hash = Digest::of_parts([
            salt.as_str().as_bytes(),
            &to_canonical_json(&messages),
            &to_canonical_json(&params),
        ]);
        Ok(Self {
            messages,
            params,
            prompt_hash,
        })
    }

    pub fn system_text(&self) -> impl Iterator<Item = &str> {
        self.messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn user_text(&self) -> impl Iterator<Item = &str> {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.content.contains(needle))
    }
}

/// JSON Schema of the object the curriculum stage must return.
pub const CURRICULUM_OUTPUT_SCHEMA: &str = r#"{
  "type": "object",
  "additionalProperties": false,
  "required": ["sections"],
  "properties": {
    "sections": {
      "type": "array",
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["section_id", "personalized_title", "personalized_summary", "analogy_theme"],
        "properties": {
          "section_id": {"type": "string"},
          "personalized_title": {"type": "string", "minLength": 1},
          "personalized_summary": {"type": "string", "minLength": 1},
          "analogy_theme": {"type": "string", "minLength": 1}
        }
      }
    }
  }
}"#;

/// JSON Schema of the object the content stage must return.
pub const CONTENT_OUTPUT_SCHEMA: &str = r#"{
  "type": "object",
  "additionalProperties": false,
  "required": ["body", "practices"],
  "properties": {
    "body": {"type": "string", "minLength": 1, "description": "markdown"},
    "practices": {
      "type": "array",
      "items": {
        "type": "object",
        "additionalProperties": false,
        "required": ["stem", "choices", "correct_index"],
        "properties": {
          "stem": {"type": "string", "minLength": 1},
          "choices": {
            "type": "array",
            "minItems": 2,
            "maxItems": 6,
            "items": {
              "type": "object",
              "additionalProperties": false,
              "required": ["text", "feedback"],
              "properties": {
                "text": {"type": "string", "minLength": 1},
                "feedback": {"type": "string", "minLength": 1}
              }
            }
          },
          "correct_index": {"type": "integer", "minimum": 0}
        }
      }
    }
  }
}"#;

/// Marker line in the default curriculum prompt listing the required ids as
/// a JSON array. The stub provider's template mode keys off it.
pub const SECTION_IDS_MARKER: &str = "REQUIRED_SECTION_IDS: ";
/// Marker line in the default content prompt carrying the analogy theme.
pub const ANALOGY_THEME_MARKER: &str = "Analogy theme: ";

fn persona_block(persona: &Persona) -> String {
    let mut lines = Vec::new();
    if !persona.interests.trim().is_empty() {
        lines.push(format!("Interests: {}", persona.interests.trim()));
    }
    if !persona.career_goals.trim().is_empty() {
        lines.push(format!("Career goals: {}", persona.career_goals.trim()));
    }
    lines.join("\n")
}

fn goals_block(goals: &[String]) -> String {
    goals
        .iter()
        .map(|g| format!("- {g}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn section_block(index: usize, section: &Section) -> String {
    format!(
        "### Section {n}\nid: {id}\ntitle: {title}\nsummary: {summary}\nscope:\n{scope}\nlearning goals:\n{goals}",
        n = index + 1,
        id = section.id,
        title = section.title,
        summary = section.summary,
        scope = section.scope,
        goals = goals_block(&section.learning_goals),
    )
}

fn persona_values(values: &mut HashMap<&'static str, String>, persona: &Persona) {
    values.insert("persona", persona_block(persona));
    values.insert("persona_interests", persona.interests.trim().to_string());
    values.insert("persona_goals", persona.career_goals.trim().to_string());
}

pub fn build_curriculum_prompt(
    course: &Course,
    persona: &Persona,
    templates: &TemplateSet,
    params: &GenerationParams,
) -> Result<PromptBundle, PipelineError> {
    let report = validate_course(course, ValidationMode::Publish);
    if !report.is_valid() {
        return Err(PipelineError::DraftCourse(report));
    }
    derive_persona_key(persona)?;

    let section_ids: Vec<&str> = course.sections.iter().map(|s| s.id.as_str()).collect();
    let mut values: HashMap<&'static str, String> = HashMap::new();
    values.insert("course_title", course.title.clone());
    values.insert("course_description", course.description.clone());
    values.insert(
        "sections",
        course
            .sections
            .iter()
            .enumerate()
            .map(|(i, s)| section_block(i, s))
            .collect::<Vec<_>>()
            .join("\n\n"),
    );
    values.insert(
        "section_ids",
        serde_json::to_string(&section_ids).expect("strings serialize"),
    );
    values.insert("output_schema", CURRICULUM_OUTPUT_SCHEMA.to_string());
    persona_values(&mut values, persona);

    PromptBundle::new(
        vec![
            ChatMessage::system(templates.curriculum_system.render(&values)),
            ChatMessage::user(templates.curriculum_user.render(&values)),
        ],
        params.clone(),
        templates.digest(),
    )
}

#[derive(Serialize)]
struct ExampleExercise<'a> {
    stem: &'a str,
    choices: &'a [crate::model::ChoiceOption],
    correct_index: usize,
}

pub fn build_content_prompt(
    course: &Course,
    curriculum: &PersonalizedCurriculum,
    section_id: &str,
    subsection_id: &str,
    persona: &Persona,
    templates: &TemplateSet,
    params: &GenerationParams,
) -> Result<PromptBundle, PipelineError> {
    if curriculum.state != CurriculumState::Saved {
        return Err(PipelineError::CurriculumNotSaved);
    }
    if curriculum.course_id != course.id || curriculum.course_version_hash != course.version_hash {
        return Err(PipelineError::VersionMismatch);
    }
    let section = course
        .section(section_id)
        .ok_or_else(|| PipelineError::UnknownSection(section_id.into()))?;
    let subsection = section
        .subsection(subsection_id)
        .ok_or_else(|| PipelineError::UnknownSubsection(subsection_id.into()))?;
    let entry = curriculum
        .entry(section_id)
        .ok_or_else(|| PipelineError::UnknownSection(section_id.into()))?;
    derive_persona_key(persona)?;

    let examples = if subsection.example_exercises.is_empty() {
        "(none)".to_string()
    } else {
        let list: Vec<_> = subsection
            .example_exercises
            .iter()
            .map(|e| ExampleExercise {
                stem: &e.stem,
                choices: &e.choices,
                correct_index: e.correct_index,
            })
            .collect();
        serde_json::to_string_pretty(&list).expect("exercises serialize")
    };

    let mut values: HashMap<&'static str, String> = HashMap::new();
    values.insert("course_title", course.title.clone());
    values.insert("section_title", section.title.clone());
    values.insert("subsection_title", subsection.title.clone());
    values.insert("personalized_title", entry.personalized_title.clone());
    values.insert("personalized_summary", entry.personalized_summary.clone());
    values.insert("analogy_theme", entry.analogy_theme.clone());
    values.insert("scope", section.scope.clone());
    values.insert("learning_goals", goals_block(&section.learning_goals));
    values.insert("canonical_body", subsection.body.clone());
    values.insert("example_exercises", examples);
    values.insert("output_schema", CONTENT_OUTPUT_SCHEMA.to_string());
    persona_values(&mut values, persona);

    PromptBundle::new(
        vec![
            ChatMessage::system(templates.content_system.render(&values)),
            ChatMessage::user(templates.content_user.render(&values)),
        ],
        params.clone(),
        templates.digest(),
    )
}

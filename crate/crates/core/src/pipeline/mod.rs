//! Two-stage generation: a personalized curriculum first, then per-subsection
//! content constrained by the saved curriculum.

mod grade;
mod parse;
mod prompt;
mod run;
pub mod template;

use thiserror::Error;

pub use grade::{grade_answer, GradeResult};
pub use parse::{
    curriculum_id, extract_json_object, parse_content_response, parse_curriculum_response,
    ParsedContent,
};
pub use prompt::{
    build_content_prompt, build_curriculum_prompt, ChatMessage, GenerationParams, PromptBundle,
    ResponseFormat, Role, ANALOGY_THEME_MARKER, CONTENT_OUTPUT_SCHEMA, CURRICULUM_OUTPUT_SCHEMA,
    DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL_ID, DEFAULT_TEMPERATURE, SECTION_IDS_MARKER,
};
pub use run::{run_generation, Generation, RetryPolicy, DEFAULT_MAX_REPAIRS};
pub use template::{TemplateError, TemplateSet};

use crate::model::{EmptyPersona, ValidationReport};
use crate::provider::ProviderError;

#[derive(Debug, Clone, Error)]
pub enum PipelineError {
    #[error("course is not publishable: {0}")]
    DraftCourse(ValidationReport),
    #[error(transparent)]
    EmptyPersona(#[from] EmptyPersona),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("malformed output: {0}")]
    MalformedOutput(String),
    #[error("output does not match the schema: {0}")]
    SchemaMismatch(String),
    #[error("curriculum structure violation: {0}")]
    StructureViolation(String),
    #[error("invalid practice at index {index}: {reason}")]
    InvalidPractice { index: usize, reason: String },
    #[error("curriculum has not been saved")]
    CurriculumNotSaved,
    #[error("course changed after the curriculum was generated")]
    VersionMismatch,
    #[error("unknown section '{0}'")]
    UnknownSection(String),
    #[error("unknown subsection '{0}'")]
    UnknownSubsection(String),
    #[error("choice index {index} out of range for {len} choices")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("output still invalid after {attempts} attempts: {last_error}")]
    RepairExhausted { attempts: u32, last_error: String },
}

impl PipelineError {
    /// Defects in model output that a repair turn may fix.
    pub fn is_repairable(&self) -> bool {
        matches!(
            self,
            Self::MalformedOutput(_)
                | Self::SchemaMismatch(_)
                | Self::StructureViolation(_)
                | Self::InvalidPractice { .. }
        )
    }
}

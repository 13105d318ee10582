//! Canonical domain types: teacher-authored courses, student personas,
//! personalized curricula and generated content.
//!
//! Every type here is a plain value. Validation never fails with an error;
//! it returns a [`ValidationReport`] listing violations by field path.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;

pub const MIN_CHOICES: usize = 2;
pub const MAX_CHOICES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Course {
    pub id: String,
    pub title: String,
    pub description: String,
    pub sections: Vec<Section>,
    /// Digest of all teacher-authored fields. Not part of the course
    /// document; recomputed by [`Course::refresh_version_hash`].
    #[serde(skip)]
    pub version_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub id: String,
    pub title: String,
    pub summary: String,
    /// What this section does and does not cover.
    pub scope: String,
    pub learning_goals: Vec<String>,
    pub subsections: Vec<Subsection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subsection {
    pub id: String,
    pub title: String,
    /// Canonical teaching content, markdown.
    pub body: String,
    pub example_exercises: Vec<PracticeExercise>,
}

/// A multiple-choice question with feedback attached to every option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PracticeExercise {
    pub id: String,
    pub stem: String,
    pub choices: Vec<ChoiceOption>,
    pub correct_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceOption {
    pub text: String,
    pub feedback: String,
}

impl Course {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
        sections: Vec<Section>,
    ) -> Self {
        let mut course = Self {
            id: id.into(),
            title: title.into(),
            description: description.into(),
            sections,
            version_hash: Digest::default(),
        };
        course.refresh_version_hash();
        course
    }

    /// Must be called after any edit to a teacher-authored field.
    pub fn refresh_version_hash(&mut self) {
        self.version_hash = compute_version_hash(self);
    }

    pub fn section(&self, section_id: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.id == section_id)
    }

    pub fn section_mut(&mut self, section_id: &str) -> Option<&mut Section> {
        self.sections.iter_mut().find(|s| s.id == section_id)
    }

    /// Copy of the course with every example exercise removed.
    pub fn without_exercises(&self) -> Course {
        let mut course = self.clone();
        for section in &mut course.sections {
            for subsection in &mut section.subsections {
                subsection.example_exercises.clear();
            }
        }
        course.refresh_version_hash();
        course
    }
}

impl Section {
    pub fn subsection(&self, subsection_id: &str) -> Option<&Subsection> {
        self.subsections.iter().find(|s| s.id == subsection_id)
    }
}

/// A student's personalization input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    #[serde(default)]
    pub interests: String,
    #[serde(default)]
    pub career_goals: String,
}

impl Persona {
    pub fn new(interests: impl Into<String>, career_goals: impl Into<String>) -> Self {
        Self {
            interests: interests.into(),
            career_goals: career_goals.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.interests.trim().is_empty() && self.career_goals.trim().is_empty()
    }
}

/// Cache-stable identity of a normalized [`Persona`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonaKey(pub Digest);

impl fmt::Display for PersonaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumState {
    Generated,
    Saved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalizedCurriculum {
    pub id: String,
    pub course_id: String,
    pub course_version_hash: Digest,
    pub persona_key: PersonaKey,
    pub state: CurriculumState,
    pub entries: Vec<CurriculumEntry>,
}

impl PersonalizedCurriculum {
    /// Moves `generated` to `saved`. Saving an already saved curriculum is a
    /// no-op; there is no transition back.
    pub fn save(&mut self) {
        self.state = CurriculumState::Saved;
    }

    pub fn entry(&self, section_id: &str) -> Option<&CurriculumEntry> {
        self.entries.iter().find(|e| e.section_id == section_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumEntry {
    pub section_id: String,
    pub personalized_title: String,
    pub personalized_summary: String,
    /// Persona-specific running example threaded through the section.
    pub analogy_theme: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedContent {
    pub id: String,
    pub course_id: String,
    pub course_version_hash: Digest,
    pub persona_key: PersonaKey,
    pub curriculum_id: String,
    pub section_id: String,
    pub subsection_id: String,
    pub body: String,
    pub practices: Vec<PracticeExercise>,
    pub meta: GenerationMeta,
}

impl GeneratedContent {
    pub fn practice(&self, practice_id: &str) -> Option<&PracticeExercise> {
        self.practices.iter().find(|p| p.id == practice_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationMeta {
    pub model_id: String,
    /// Digest of the exact prompt bundle sent to the provider.
    pub prompt_hash: Digest,
    pub created_at: DateTime<Utc>,
    #[serde(rename = "provider_latency_ms", with = "duration_ms")]
    pub provider_latency: Duration,
}

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// Partially written courses: structure and ids must be sound.
    Draft,
    /// Everything `Draft` checks, plus the fields generation depends on.
    Publish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

fn blank(s: &str) -> bool {
    s.trim().is_empty()
}

pub fn validate_course(course: &Course, mode: ValidationMode) -> ValidationReport {
    let mut report = ValidationReport::default();
    let publish = mode == ValidationMode::Publish;

    if blank(&course.id) {
        report.push("id", "must not be empty");
    }
    if blank(&course.title) {
        report.push("title", "must not be empty");
    }
    if course.sections.is_empty() {
        report.push("sections", "course needs at least one section");
    }

    let mut section_ids: HashMap<&str, usize> = HashMap::new();
    for (si, section) in course.sections.iter().enumerate() {
        let at = format!("sections[{si}]");
        if blank(&section.id) {
            report.push(format!("{at}.id"), "must not be empty");
        } else if let Some(first) = section_ids.insert(&section.id, si) {
            report.push(
                format!("{at}.id"),
                format!(
                    "duplicate section id '{}' (also at sections[{first}].id)",
                    section.id
                ),
            );
        }
        if blank(&section.title) {
            report.push(format!("{at}.title"), "must not be empty");
        }
        for (gi, goal) in section.learning_goals.iter().enumerate() {
            if blank(goal) {
                report.push(format!("{at}.learning_goals[{gi}]"), "must not be empty");
            }
        }
        if publish {
            if blank(&section.scope) {
                report.push(format!("{at}.scope"), "required to publish");
            }
            if section.learning_goals.is_empty() {
                report.push(
                    format!("{at}.learning_goals"),
                    "at least one learning goal required to publish",
                );
            }
        }
        if section.subsections.is_empty() {
            report.push(
                format!("{at}.subsections"),
                "section needs at least one subsection",
            );
        }

        let mut sub_ids: HashMap<&str, usize> = HashMap::new();
        for (ui, sub) in section.subsections.iter().enumerate() {
            let at = format!("{at}.subsections[{ui}]");
            if blank(&sub.id) {
                report.push(format!("{at}.id"), "must not be empty");
            } else if let Some(first) = sub_ids.insert(&sub.id, ui) {
                report.push(
                    format!("{at}.id"),
                    format!(
                        "duplicate subsection id '{}' (also at sections[{si}].subsections[{first}].id)",
                        sub.id
                    ),
                );
            }
            if blank(&sub.title) {
                report.push(format!("{at}.title"), "must not be empty");
            }
            if publish && blank(&sub.body) {
                report.push(format!("{at}.body"), "required to publish");
            }
            let mut exercise_ids: HashMap<&str, usize> = HashMap::new();
            for (ei, exercise) in sub.example_exercises.iter().enumerate() {
                let at = format!("{at}.example_exercises[{ei}]");
                if let Some(first) = exercise_ids.insert(&exercise.id, ei) {
                    report.push(
                        format!("{at}.id"),
                        format!("duplicate exercise id '{}' (also at index {first})", exercise.id),
                    );
                }
                for v in exercise_violations(exercise) {
                    report.push(format!("{at}.{}", v.path), v.message);
                }
            }
        }
    }
    report
}

/// Structural checks on a single exercise. Paths are relative to the exercise.
pub fn exercise_violations(exercise: &PracticeExercise) -> Vec<Violation> {
    let mut report = ValidationReport::default();
    if blank(&exercise.id) {
        report.push("id", "must not be empty");
    }
    if blank(&exercise.stem) {
        report.push("stem", "must not be empty");
    }
    let n = exercise.choices.len();
    if !(MIN_CHOICES..=MAX_CHOICES).contains(&n) {
        report.push(
            "choices",
            format!("expected {MIN_CHOICES} to {MAX_CHOICES} choices, found {n}"),
        );
    }
    if exercise.correct_index >= n {
        report.push(
            "correct_index",
            format!("index {} out of range for {n} choices", exercise.correct_index),
        );
    }
    for (ci, choice) in exercise.choices.iter().enumerate() {
        if blank(&choice.text) {
            report.push(format!("choices[{ci}].text"), "must not be empty");
        }
        if blank(&choice.feedback) {
            report.push(format!("choices[{ci}].feedback"), "must not be empty");
        }
    }
    report.violations
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("persona needs interests or career goals")]
pub struct EmptyPersona;

/// Trim, collapse internal whitespace, case-fold.
fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn derive_persona_key(persona: &Persona) -> Result<PersonaKey, EmptyPersona> {
    if persona.is_empty() {
        return Err(EmptyPersona);
    }
    let joined = format!(
        "{}\u{1f}{}",
        normalize(&persona.interests),
        normalize(&persona.career_goals)
    );
    Ok(PersonaKey(Digest::of(joined)))
}

#[derive(Serialize)]
struct HashedCourse<'a> {
    id: &'a str,
    title: &'a str,
    description: &'a str,
    sections: &'a [Section],
}

/// Digest over the compact JSON serialization of every teacher-authored
/// field in document order.
pub fn compute_version_hash(course: &Course) -> Digest {
    let view = HashedCourse {
        id: &course.id,
        title: &course.title,
        description: &course.description,
        sections: &course.sections,
    };
    let bytes = serde_json::to_vec(&view).expect("course serialization is infallible");
    Digest::of(bytes)
}

//! Parsing and validation of model output. Nothing the model returns is
//! trusted until it passes through here.

use std::collections::HashSet;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use super::PipelineError;
use crate::digest::Digest;
use crate::model::{
    exercise_violations, ChoiceOption, Course, CurriculumEntry, CurriculumState, PersonaKey,
    PersonalizedCurriculum, PracticeExercise,
};

/// Returns the first JSON object embedded in `raw`, skipping any prose,
/// code fences or trailing text around it.
pub fn extract_json_object(raw: &str) -> Result<Map<String, Value>, PipelineError> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Ok(map);
        }
    }
    Err(PipelineError::MalformedOutput(
        "no JSON object found in the response".into(),
    ))
}

fn decode<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, PipelineError> {
    serde_path_to_error::deserialize(Value::Object(map)).map_err(|e| {
        let path = e.path().to_string();
        PipelineError::SchemaMismatch(format!("{path}: {}", e.into_inner()))
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurriculumWire {
    sections: Vec<CurriculumEntry>,
}

/// Deterministic curriculum id for a course version and persona.
pub fn curriculum_id(course: &Course, persona_key: &PersonaKey) -> String {
    let digest = Digest::of_parts([
        course.id.as_str(),
        course.version_hash.as_str(),
        persona_key.0.as_str(),
    ]);
    format!("cur-{}", digest.prefix(24))
}

pub fn parse_curriculum_response(
    raw: &str,
    course: &Course,
    persona_key: &PersonaKey,
) -> Result<PersonalizedCurriculum, PipelineError> {
    let wire: CurriculumWire = decode(extract_json_object(raw)?)?;
    for (i, entry) in wire.sections.iter().enumerate() {
        for (field, value) in [
            ("personalized_title", &entry.personalized_title),
            ("personalized_summary", &entry.personalized_summary),
            ("analogy_theme", &entry.analogy_theme),
        ] {
            if value.trim().is_empty() {
                return Err(PipelineError::SchemaMismatch(format!(
                    "sections[{i}].{field}: must not be empty"
                )));
            }
        }
    }
    check_bijection(&wire.sections, course)?;
    Ok(PersonalizedCurriculum {
        id: curriculum_id(course, persona_key),
        course_id: course.id.clone(),
        course_version_hash: course.version_hash.clone(),
        persona_key: persona_key.clone(),
        state: CurriculumState::Generated,
        entries: wire.sections,
    })
}

fn check_bijection(entries: &[CurriculumEntry], course: &Course) -> Result<(), PipelineError> {
    let expected: Vec<&str> = course.sections.iter().map(|s| s.id.as_str()).collect();
    let found: Vec<&str> = entries.iter().map(|e| e.section_id.as_str()).collect();
    let known: HashSet<&str> = expected.iter().copied().collect();

    let invented: Vec<&str> = found.iter().copied().filter(|id| !known.contains(id)).collect();
    if !invented.is_empty() {
        return Err(PipelineError::StructureViolation(format!(
            "unknown section id(s): {}",
            quoted(&invented)
        )));
    }
    let mut seen = HashSet::new();
    let duplicated: Vec<&str> = found.iter().copied().filter(|id| !seen.insert(*id)).collect();
    if !duplicated.is_empty() {
        return Err(PipelineError::StructureViolation(format!(
            "duplicated section id(s): {}",
            quoted(&duplicated)
        )));
    }
    let missing: Vec<&str> = expected.iter().copied().filter(|id| !seen.contains(id)).collect();
    if !missing.is_empty() {
        return Err(PipelineError::StructureViolation(format!(
            "missing section id(s): {}",
            quoted(&missing)
        )));
    }
    if found != expected {
        return Err(PipelineError::StructureViolation(format!(
            "sections reordered: expected [{}], found [{}]",
            quoted(&expected),
            quoted(&found)
        )));
    }
    Ok(())
}

fn quoted(ids: &[&str]) -> String {
    ids.iter()
        .map(|id| format!("'{id}'"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContentWire {
    body: String,
    practices: Vec<PracticeWire>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PracticeWire {
    stem: String,
    choices: Vec<ChoiceOption>,
    correct_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedContent {
    pub body: String,
    pub practices: Vec<PracticeExercise>,
}

/// Practices get positional ids `p1`, `p2`, ...
pub fn parse_content_response(raw: &str) -> Result<ParsedContent, PipelineError> {
    let wire: ContentWire = decode(extract_json_object(raw)?)?;
    if wire.body.trim().is_empty() {
        return Err(PipelineError::SchemaMismatch(
            "body: must not be empty".into(),
        ));
    }
    let mut practices = Vec::with_capacity(wire.practices.len());
    for (index, p) in wire.practices.into_iter().enumerate() {
        let practice = PracticeExercise {
            id: format!("p{}", index + 1),
            stem: p.stem,
            choices: p.choices,
            correct_index: p.correct_index,
        };
        if let Some(v) = exercise_violations(&practice).into_iter().next() {
            return Err(PipelineError::InvalidPractice {
                index,
                reason: format!("{}: {}", v.path, v.message),
            });
        }
        practices.push(practice);
    }
    Ok(ParsedContent {
        body: wire.body,
        practices,
    })
}

//! Course import and export in JSON (full fidelity) and CSV (flat, one row
//! per subsection, no exercises).
//!
//! JSON exports are canonical: keys sorted, two-space indentation, trailing
//! newline. Imports are strict and every failure carries a location.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::Digest;
use crate::model::{
    exercise_violations, validate_course, Course, Section, Subsection, ValidationMode,
    ValidationReport,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImportError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("validation failed: {0}")]
    Validation(ValidationReport),
}

impl ImportError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Machine-readable location: a field path or `line:column`.
    pub fn location(&self) -> String {
        match self {
            Self::Parse { line, column, .. } => format!("{line}:{column}"),
            Self::Schema { path, .. } => path.clone(),
            Self::Validation(report) => report
                .violations
                .first()
                .map(|v| v.path.clone())
                .unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CourseFormat {
    Json,
    Csv,
}

impl CourseFormat {
    /// Guess from a file extension or a content type.
    pub fn detect(hint: &str) -> Option<Self> {
        let hint = hint.to_ascii_lowercase();
        if hint.ends_with(".json") || hint.contains("json") {
            Some(Self::Json)
        } else if hint.ends_with(".csv") || hint.contains("csv") {
            Some(Self::Csv)
        } else {
            None
        }
    }
}

impl fmt::Display for CourseFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Json => "json",
            Self::Csv => "csv",
        })
    }
}

pub fn import_course(bytes: &[u8], format: CourseFormat) -> Result<Course, ImportError> {
    match format {
        CourseFormat::Json => import_json(bytes),
        CourseFormat::Csv => import_csv(bytes),
    }
}

pub fn export_course(course: &Course, format: CourseFormat) -> Vec<u8> {
    match format {
        CourseFormat::Json => export_json(course),
        CourseFormat::Csv => export_csv(course),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CourseDocument {
    format_version: u32,
    course: Course,
}

#[derive(Serialize)]
struct CourseDocumentRef<'a> {
    format_version: u32,
    course: &'a Course,
}

fn utf8(bytes: &[u8]) -> Result<&str, ImportError> {
    std::str::from_utf8(bytes).map_err(|e| {
        let valid = &bytes[..e.valid_up_to()];
        let line = valid.iter().filter(|&&b| b == b'\n').count() + 1;
        let column = valid.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
        ImportError::Parse {
            line,
            column,
            message: "input is not valid UTF-8".into(),
        }
    })
}

pub fn import_json(bytes: &[u8]) -> Result<Course, ImportError> {
    let text = utf8(bytes)?;
    let value: Value = serde_json::from_str(text).map_err(|e| ImportError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let doc: CourseDocument = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ImportError::schema(path, e.into_inner().to_string())
    })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(ImportError::schema(
            "format_version",
            format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                doc.format_version
            ),
        ));
    }
    let course = doc.course;
    for (si, section) in course.sections.iter().enumerate() {
        for (ui, sub) in section.subsections.iter().enumerate() {
            for (ei, exercise) in sub.example_exercises.iter().enumerate() {
                if let Some(v) = exercise_violations(exercise).into_iter().next() {
                    return Err(ImportError::schema(
                        format!(
                            "course.sections[{si}].subsections[{ui}].example_exercises[{ei}].{}",
                            v.path
                        ),
                        v.message,
                    ));
                }
            }
        }
    }
    finish_import(course)
}

fn finish_import(mut course: Course) -> Result<Course, ImportError> {
    let report = validate_course(&course, ValidationMode::Draft);
    if !report.is_valid() {
        return Err(ImportError::Validation(report));
    }
    course.refresh_version_hash();
    Ok(course)
}

pub fn export_json(course: &Course) -> Vec<u8> {
    to_canonical_json(&CourseDocumentRef {
        format_version: FORMAT_VERSION,
        course,
    })
}

/// Canonical JSON: object keys sorted, two-space indent, trailing newline.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let value = serde_json::to_value(value).expect("value serializes to JSON");
    canonicalize_value(value)
}

/// Re-emit arbitrary JSON text in canonical form.
pub fn canonicalize_json(bytes: &[u8]) -> Result<Vec<u8>, serde_json::Error> {
    let value: Value = serde_json::from_slice(bytes)?;
    Ok(canonicalize_value(value))
}

fn canonicalize_value(mut value: Value) -> Vec<u8> {
    sort_keys(&mut value);
    let mut out = serde_json::to_vec_pretty(&value).expect("JSON value serializes");
    out.push(b'\n');
    out
}

fn sort_keys(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.sort_keys();
            map.values_mut().for_each(sort_keys);
        }
        Value::Array(items) => items.iter_mut().for_each(sort_keys),
        _ => {}
    }
}

pub const CSV_COLUMNS: [&str; 10] = [
    "course_title",
    "course_description",
    "section_index",
    "section_title",
    "section_summary",
    "section_scope",
    "learning_goals",
    "subsection_index",
    "subsection_title",
    "body",
];

/// Optional columns. Exported so that ids survive a round trip; when absent
/// on import, ids are derived from titles and indices.
pub const CSV_ID_COLUMNS: [&str; 3] = ["course_id", "section_id", "subsection_id"];

pub fn encode_learning_goals(goals: &[String]) -> String {
    goals
        .iter()
        .map(|g| g.replace('\\', "\\\\").replace(';', "\\;"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Inverse of [`encode_learning_goals`]. Blank segments are dropped.
pub fn decode_learning_goals(cell: &str) -> Result<Vec<String>, String> {
    let mut goals = Vec::new();
    let mut current = String::new();
    let mut chars = cell.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some(escaped) => current.push(escaped),
                None => return Err("dangling '\\' at end of learning_goals".into()),
            },
            ';' => goals.push(std::mem::take(&mut current)),
            c => current.push(c),
        }
    }
    goals.push(current);
    goals.retain(|g| !g.trim().is_empty());
    Ok(goals)
}

struct CsvRow {
    /// Zero-based data row, used in error paths as `rows[n]`.
    row: usize,
    course_id: String,
    course_title: String,
    course_description: String,
    section_index: usize,
    section_id: String,
    section_title: String,
    section_summary: String,
    section_scope: String,
    learning_goals: Vec<String>,
    subsection_index: usize,
    subsection_id: String,
    subsection_title: String,
    body: String,
}

fn csv_parse_error(e: csv::Error) -> ImportError {
    let (line, message) = match e.position() {
        Some(pos) => (pos.line() as usize, e.to_string()),
        None => (0, e.to_string()),
    };
    ImportError::Parse {
        line,
        column: 0,
        message,
    }
}

pub fn import_csv(bytes: &[u8]) -> Result<Course, ImportError> {
    let text = utf8(bytes)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());

    let headers = reader.headers().map_err(csv_parse_error)?.clone();
    let mut columns: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, name) in headers.iter().enumerate() {
        let known = CSV_COLUMNS
            .iter()
            .chain(CSV_ID_COLUMNS.iter())
            .find(|c| **c == name)
            .ok_or_else(|| ImportError::schema("header", format!("unknown column '{name}'")))?;
        if columns.insert(known, i).is_some() {
            return Err(ImportError::schema(
                "header",
                format!("duplicate column '{name}'"),
            ));
        }
    }
    for required in CSV_COLUMNS {
        if !columns.contains_key(required) {
            return Err(ImportError::schema(
                format!("header.{required}"),
                format!("missing column '{required}'"),
            ));
        }
    }

    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_parse_error)?;
        let cell = |name: &str| -> String {
            columns
                .get(name)
                .and_then(|&i| record.get(i))
                .unwrap_or_default()
                .to_string()
        };
        let index = |name: &str| -> Result<usize, ImportError> {
            let raw = cell(name);
            match raw.trim().parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(ImportError::schema(
                    format!("rows[{row}].{name}"),
                    format!("expected a positive integer, found '{raw}'"),
                )),
            }
        };
        let learning_goals = decode_learning_goals(&cell("learning_goals"))
            .map_err(|m| ImportError::schema(format!("rows[{row}].learning_goals"), m))?;
        rows.push(CsvRow {
            row,
            course_id: cell("course_id"),
            course_title: cell("course_title"),
            course_description: cell("course_description"),
            section_index: index("section_index")?,
            section_id: cell("section_id"),
            section_title: cell("section_title"),
            section_summary: cell("section_summary"),
            section_scope: cell("section_scope"),
            learning_goals,
            subsection_index: index("subsection_index")?,
            subsection_id: cell("subsection_id"),
            subsection_title: cell("subsection_title"),
            body: cell("body"),
        });
    }

    let first = rows
        .first()
        .ok_or_else(|| ImportError::schema("rows", "no data rows"))?;
    for r in &rows[1..] {
        for (field, a, b) in [
            ("course_id", &first.course_id, &r.course_id),
            ("course_title", &first.course_title, &r.course_title),
            (
                "course_description",
                &first.course_description,
                &r.course_description,
            ),
        ] {
            if a != b {
                return Err(ImportError::schema(
                    format!("rows[{}].{field}", r.row),
                    "conflicting course metadata across rows",
                ));
            }
        }
    }

    let mut grouped: BTreeMap<usize, Vec<&CsvRow>> = BTreeMap::new();
    for r in &rows {
        grouped.entry(r.section_index).or_default().push(r);
    }

    let mut sections = Vec::with_capacity(grouped.len());
    for (expected, (index, group)) in (1..).zip(&grouped) {
        if *index != expected {
            return Err(ImportError::schema(
                format!("rows[{}].section_index", group[0].row),
                format!("non-contiguous section_index: expected {expected}, found {index}"),
            ));
        }
        sections.push(build_section(*index, group)?);
    }

    let course_id = if first.course_id.trim().is_empty() {
        format!("course-{}", Digest::of(&first.course_title).prefix(12))
    } else {
        first.course_id.clone()
    };
    finish_import(Course::new(
        course_id,
        first.course_title.clone(),
        first.course_description.clone(),
        sections,
    ))
}

fn build_section(index: usize, group: &[&CsvRow]) -> Result<Section, ImportError> {
    let head = group[0];
    for r in &group[1..] {
        let conflict = [
            ("section_id", head.section_id == r.section_id),
            ("section_title", head.section_title == r.section_title),
            ("section_summary", head.section_summary == r.section_summary),
            ("section_scope", head.section_scope == r.section_scope),
            ("learning_goals", head.learning_goals == r.learning_goals),
        ]
        .into_iter()
        .find(|(_, same)| !same);
        if let Some((field, _)) = conflict {
            return Err(ImportError::schema(
                format!("rows[{}].{field}", r.row),
                format!("conflicting section metadata for section_index {index}"),
            ));
        }
    }

    let mut ordered: Vec<&CsvRow> = group.to_vec();
    ordered.sort_by_key(|r| r.subsection_index);
    let mut subsections = Vec::with_capacity(ordered.len());
    for (expected, r) in (1..).zip(&ordered) {
        if r.subsection_index != expected {
            return Err(ImportError::schema(
                format!("rows[{}].subsection_index", r.row),
                format!(
                    "non-contiguous subsection_index in section {index}: expected {expected}, found {}",
                    r.subsection_index
                ),
            ));
        }
        subsections.push(Subsection {
            id: or_default_id(&r.subsection_id, || format!("s{index}-{expected}")),
            title: r.subsection_title.clone(),
            body: r.body.clone(),
            example_exercises: Vec::new(),
        });
    }

    Ok(Section {
        id: or_default_id(&head.section_id, || format!("s{index}")),
        title: head.section_title.clone(),
        summary: head.section_summary.clone(),
        scope: head.section_scope.clone(),
        learning_goals: head.learning_goals.clone(),
        subsections,
    })
}

fn or_default_id(cell: &str, default: impl FnOnce() -> String) -> String {
    if cell.trim().is_empty() {
        default()
    } else {
        cell.to_string()
    }
}

pub fn export_csv(course: &Course) -> Vec<u8> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    let header: Vec<&str> = CSV_COLUMNS.iter().chain(CSV_ID_COLUMNS.iter()).copied().collect();
    writer.write_record(&header).expect("write to Vec");
    for (si, section) in course.sections.iter().enumerate() {
        let goals = encode_learning_goals(&section.learning_goals);
        for (ui, sub) in section.subsections.iter().enumerate() {
            let section_index = (si + 1).to_string();
            let subsection_index = (ui + 1).to_string();
            writer
                .write_record([
                    course.title.as_str(),
                    &course.description,
                    &section_index,
                    &section.title,
                    &section.summary,
                    &section.scope,
                    &goals,
                    &subsection_index,
                    &sub.title,
                    &sub.body,
                    &course.id,
                    &section.id,
                    &sub.id,
                ])
                .expect("write to Vec");
        }
    }
    writer.into_inner().expect("flush to Vec")
}

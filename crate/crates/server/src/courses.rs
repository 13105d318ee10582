//! Teacher-owned courses, optionally persisted one file per course.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tutorgen_core::course_io::{export_json, import_json, to_canonical_json};
use tutorgen_core::model::Course;
use tutorgen_core::Digest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CourseRecord {
    pub course: Course,
    pub published: bool,
    /// Principal id of the creating teacher.
    pub owner: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordFile {
    owner: String,
    published: bool,
    document: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum RepoError {
    #[error("course '{0}' already exists")]
    Exists(String),
    #[error("course repository I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt course file {path}: {message}")]
    Corrupt { path: String, message: String },
}

pub struct CourseRepository {
    courses: RwLock<BTreeMap<String, CourseRecord>>,
    dir: Option<PathBuf>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RepoError + '_ {
    move |source| RepoError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl CourseRepository {
    pub fn in_memory() -> Self {
        Self {
            courses: RwLock::new(BTreeMap::new()),
            dir: None,
        }
    }

    /// Loads every `*.json` record in `dir`, creating it if needed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RepoError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut courses = BTreeMap::new();
        for entry in std::fs::read_dir(&dir).map_err(io(&dir))? {
            let path = entry.map_err(io(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let record = read_record(&path)?;
            courses.insert(record.course.id.clone(), record);
        }
        Ok(Self {
            courses: RwLock::new(courses),
            dir: Some(dir),
        })
    }

    fn file_for(&self, id: &str) -> Option<PathBuf> {
        // Ids are free text; name files by digest.
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}.json", Digest::of(id).prefix(32))))
    }

    fn persist(&self, record: &CourseRecord) -> Result<(), RepoError> {
        let Some(path) = self.file_for(&record.course.id) else {
            return Ok(());
        };
        let document: Value =
            serde_json::from_slice(&export_json(&record.course)).expect("export is JSON");
        let bytes = to_canonical_json(&RecordFile {
            owner: record.owner.clone(),
            published: record.published,
            document,
        });
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, bytes).map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))
    }

    pub fn insert(&self, record: CourseRecord) -> Result<(), RepoError> {
        let mut courses = self.courses.write().expect("course table");
        if courses.contains_key(&record.course.id) {
            return Err(RepoError::Exists(record.course.id));
        }
        self.persist(&record)?;
        courses.insert(record.course.id.clone(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<CourseRecord> {
        self.courses.read().expect("course table").get(id).cloned()
    }

    pub fn list(&self) -> Vec<CourseRecord> {
        self.courses
            .read()
            .expect("course table")
            .values()
            .cloned()
            .collect()
    }

    /// Applies `f` to a copy of the record and stores the result if `f`
    /// returns `Ok`. The write lock is held throughout, so updates to one
    /// course are serialized.
    pub fn update<T, E>(
        &self,
        id: &str,
        f: impl FnOnce(&mut CourseRecord) -> Result<T, E>,
    ) -> Option<Result<T, E>>
    where
        E: From<RepoError>,
    {
        let mut courses = self.courses.write().expect("course table");
        let current = courses.get(id)?;
        let mut next = current.clone();
        let out = match f(&mut next) {
            Ok(out) => out,
            Err(e) => return Some(Err(e)),
        };
        if next != *current {
            if let Err(e) = self.persist(&next) {
                return Some(Err(e.into()));
            }
            courses.insert(id.to_string(), next);
        }
        Some(Ok(out))
    }
}

fn read_record(path: &Path) -> Result<CourseRecord, RepoError> {
    let corrupt = |message: String| RepoError::Corrupt {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(io(path))?;
    let file: RecordFile =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let document = serde_json::to_vec(&file.document).expect("value serializes");
    let course = import_json(&document).map_err(|e| corrupt(e.to_string()))?;
    Ok(CourseRecord {
        course,
        published: file.published,
        owner: file.owner,
    })
}

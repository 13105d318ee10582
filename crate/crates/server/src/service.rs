//! Request-independent service logic: courses, cache-or-enqueue generation,
//! ownership and grading. Handlers in `routes` are thin wrappers over this.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;
use tutorgen_core::cache::{CacheKey, ContentStore, StoreRecord};
use tutorgen_core::course_io::{export_course, import_course, to_canonical_json, CourseFormat};
use tutorgen_core::model::{
    derive_persona_key, validate_course, Course, CurriculumState, GeneratedContent, Persona,
    PersonalizedCurriculum, Subsection, ValidationMode, ValidationReport,
};
use tutorgen_core::pipeline::{
    build_content_prompt, build_curriculum_prompt, curriculum_id, grade_answer,
    parse_content_response, parse_curriculum_response, run_generation, GenerationParams,
    GradeResult, PipelineError, RetryPolicy, TemplateSet,
};
use tutorgen_core::provider::ChatProvider;

use crate::auth::{Principal, Principals, Role};
use crate::courses::{CourseRecord, CourseRepository, RepoError};
use crate::error::ApiError;
use crate::jobs::{GenerationJob, JobError, JobKind, JobRegistry, JobState, JobSubject};

pub const DEFAULT_WORKERS: usize = 100;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Generations allowed in flight; further jobs wait in FIFO order.
    pub workers: usize,
    /// Include `correct_index` and per-choice feedback in content responses.
    pub reveal_answers: bool,
    pub params: GenerationParams,
    pub retry: RetryPolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: DEFAULT_WORKERS,
            reveal_answers: false,
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct ServiceParts {
    pub config: ServiceConfig,
    pub principals: Principals,
    pub courses: CourseRepository,
    pub store: Arc<dyn ContentStore>,
    pub provider: Arc<dyn ChatProvider>,
    pub templates: TemplateSet,
    /// Where ownership and attempt records are kept; memory only if `None`.
    pub state_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

struct Inner {
    config: ServiceConfig,
    principals: Principals,
    courses: CourseRepository,
    store: Arc<dyn ContentStore>,
    provider: Arc<dyn ChatProvider>,
    templates: TemplateSet,
    jobs: JobRegistry,
    workers: Arc<Semaphore>,
    /// Cache key -> job generating it. Checked together with the store under
    /// this lock so identical concurrent requests share one generation.
    in_flight: Mutex<HashMap<CacheKey, String>>,
    artifacts: Mutex<Artifacts>,
    artifacts_file: Option<PathBuf>,
    attempts: Mutex<Vec<Attempt>>,
    attempts_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Artifacts {
    curricula: BTreeMap<String, CurriculumRef>,
    contents: BTreeMap<String, ContentRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurriculumRef {
    key: CacheKey,
    persona: Persona,
    /// Principal id -> whether that principal saved the curriculum.
    owners: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContentRef {
    key: CacheKey,
    owners: BTreeSet<String>,
}

/// One graded submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub principal_id: String,
    pub content_id: String,
    pub practice_id: String,
    pub chosen_index: usize,
    pub correct: bool,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionPatch {
    pub title: Option<String>,
    pub summary: Option<String>,
    pub scope: Option<String>,
    pub learning_goals: Option<Vec<String>>,
    pub subsections: Option<Vec<Subsection>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectionUpdate {
    pub course_id: String,
    pub section_id: String,
    pub previous_version_hash: String,
    pub version_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CourseView {
    #[serde(flatten)]
    pub course: Course,
    pub version_hash: String,
    pub published: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CourseSummary {
    pub id: String,
    pub title: String,
    pub description: String,
    pub version_hash: String,
    pub published: bool,
    pub section_count: usize,
}

/// Result of a personalize or content request.
#[derive(Debug, Clone)]
pub struct Submitted {
    pub job: GenerationJob,
    /// True if the result was already cached.
    pub cached: bool,
}

impl From<&CourseRecord> for CourseView {
    fn from(r: &CourseRecord) -> Self {
        Self {
            version_hash: r.course.version_hash.to_string(),
            course: r.course.clone(),
            published: r.published,
        }
    }
}

impl From<RepoError> for ApiError {
    fn from(err: RepoError) -> Self {
        match err {
            RepoError::Exists(id) => ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "course_exists",
                format!("a course with id '{id}' already exists"),
            ),
            other => {
                tracing::error!(error = %other, "course repository failure");
                ApiError::internal("storage failure")
            }
        }
    }
}

fn job_error(err: &PipelineError) -> JobError {
    let code = match err {
        PipelineError::Provider(_) => "provider_error",
        PipelineError::RepairExhausted { .. } => "repair_exhausted",
        _ => "generation_failed",
    };
    JobError {
        code: code.into(),
        message: err.to_string(),
    }
}

fn storage_error(err: tutorgen_core::cache::StoreError) -> JobError {
    tracing::error!(error = %err, "storing generated artifact");
    JobError {
        code: "storage_error".into(),
        message: "the generated result could not be stored".into(),
    }
}

fn content_id(key: &CacheKey) -> String {
    format!("cnt-{}", key.digest().prefix(24))
}

fn write_atomic(path: &PathBuf, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

impl AppState {
    pub fn new(parts: ServiceParts) -> anyhow::Result<Self> {
        let (artifacts_file, attempts_file) = match &parts.state_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (
                    Some(dir.join("artifacts.json")),
                    Some(dir.join("attempts.jsonl")),
                )
            }
            None => (None, None),
        };
        let artifacts = match &artifacts_file {
            Some(path) if path.exists() => serde_json::from_slice(&std::fs::read(path)?)?,
            _ => Artifacts::default(),
        };
        let workers = parts.config.workers.max(1);
        Ok(Self(Arc::new(Inner {
            principals: parts.principals,
            courses: parts.courses,
            store: parts.store,
            provider: parts.provider,
            templates: parts.templates,
            jobs: JobRegistry::new(),
            workers: Arc::new(Semaphore::new(workers)),
            in_flight: Mutex::new(HashMap::new()),
            artifacts: Mutex::new(artifacts),
            artifacts_file,
            attempts: Mutex::new(Vec::new()),
            attempts_file,
            config: parts.config,
        })))
    }

    pub fn principals(&self) -> &Principals {
        &self.0.principals
    }

    pub fn jobs(&self) -> &JobRegistry {
        &self.0.jobs
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub fn attempts(&self) -> Vec<Attempt> {
        self.0.attempts.lock().expect("attempt log").clone()
    }

    fn with_artifacts<T>(&self, f: impl FnOnce(&mut Artifacts) -> T) -> Result<T, ApiError> {
        let mut artifacts = self.0.artifacts.lock().expect("artifact index");
        let out = f(&mut artifacts);
        if let Some(path) = &self.0.artifacts_file {
            write_atomic(path, &to_canonical_json(&*artifacts)).map_err(|e| {
                tracing::error!(error = %e, "writing artifact index");
                ApiError::internal("storage failure")
            })?;
        }
        Ok(out)
    }

    // ---- courses ----

    fn owned_course(&self, principal: &Principal, id: &str) -> Result<CourseRecord, ApiError> {
        principal.require(Role::Teacher)?;
        self.0
            .courses
            .get(id)
            .filter(|r| r.owner == principal.id)
            .ok_or_else(|| ApiError::not_found("course"))
    }

    pub fn create_course(
        &self,
        principal: &Principal,
        bytes: &[u8],
        format: CourseFormat,
    ) -> Result<CourseView, ApiError> {
        principal.require(Role::Teacher)?;
        let course = import_course(bytes, format)?;
        let record = CourseRecord {
            course,
            published: false,
            owner: principal.id.clone(),
        };
        self.0.courses.insert(record.clone())?;
        tracing::info!(course_id = %record.course.id, "course created");
        Ok(CourseView::from(&record))
    }

    /// Teachers see their own courses; students see published ones.
    pub fn list_courses(&self, principal: &Principal) -> Vec<CourseSummary> {
        self.0
            .courses
            .list()
            .into_iter()
            .filter(|r| match principal.role {
                Role::Teacher => r.owner == principal.id,
                Role::Student => r.published,
            })
            .map(|r| CourseSummary {
                id: r.course.id.clone(),
                title: r.course.title.clone(),
                description: r.course.description.clone(),
                version_hash: r.course.version_hash.to_string(),
                published: r.published,
                section_count: r.course.sections.len(),
            })
            .collect()
    }

    pub fn get_course(&self, principal: &Principal, id: &str) -> Result<CourseView, ApiError> {
        self.0
            .courses
            .get(id)
            .filter(|r| match principal.role {
                Role::Teacher => r.owner == principal.id,
                Role::Student => r.published,
            })
            .map(|r| CourseView::from(&r))
            .ok_or_else(|| ApiError::not_found("course"))
    }

    pub fn export_course(
        &self,
        principal: &Principal,
        id: &str,
        format: CourseFormat,
    ) -> Result<Vec<u8>, ApiError> {
        let record = self.owned_course(principal, id)?;
        Ok(export_course(&record.course, format))
    }

    pub fn validation(
        &self,
        principal: &Principal,
        id: &str,
        mode: ValidationMode,
    ) -> Result<ValidationReport, ApiError> {
        let record = self.owned_course(principal, id)?;
        Ok(validate_course(&record.course, mode))
    }

    /// A published course must stay publishable after the edit.
    pub fn update_section(
        &self,
        principal: &Principal,
        course_id: &str,
        section_id: &str,
        patch: SectionPatch,
    ) -> Result<SectionUpdate, ApiError> {
        self.owned_course(principal, course_id)?;
        self.0
            .courses
            .update(course_id, |record| {
                let previous = record.course.version_hash.clone();
                let section = record
                    .course
                    .section_mut(section_id)
                    .ok_or_else(|| ApiError::not_found("section"))?;
                if let Some(v) = patch.title {
                    section.title = v;
                }
                if let Some(v) = patch.summary {
                    section.summary = v;
                }
                if let Some(v) = patch.scope {
                    section.scope = v;
                }
                if let Some(v) = patch.learning_goals {
                    section.learning_goals = v;
                }
                if let Some(v) = patch.subsections {
                    section.subsections = v;
                }
                let mode = if record.published {
                    ValidationMode::Publish
                } else {
                    ValidationMode::Draft
                };
                let report = validate_course(&record.course, mode);
                if !report.is_valid() {
                    return Err(ApiError::invalid_course(&report));
                }
                record.course.refresh_version_hash();
                Ok(SectionUpdate {
                    course_id: course_id.into(),
                    section_id: section_id.into(),
                    previous_version_hash: previous.to_string(),
                    version_hash: record.course.version_hash.to_string(),
                })
            })
            .unwrap_or_else(|| Err(ApiError::not_found("course")))
    }

    /// Idempotent.
    pub fn publish_course(&self, principal: &Principal, id: &str) -> Result<CourseView, ApiError> {
        self.owned_course(principal, id)?;
        self.0
            .courses
            .update(id, |record| {
                let report = validate_course(&record.course, ValidationMode::Publish);
                if !report.is_valid() {
                    return Err(ApiError::invalid_course(&report));
                }
                record.published = true;
                Ok(CourseView::from(&*record))
            })
            .unwrap_or_else(|| Err(ApiError::not_found("course")))
    }

    // ---- generation ----

    /// Returns a succeeded job on a cache hit, joins an identical in-flight
    /// job, or enqueues `work`, which must store the artifact under `key`.
    fn cache_or_enqueue<W>(
        &self,
        principal: &Principal,
        key: CacheKey,
        kind: JobKind,
        subject: JobSubject,
        result_ref: String,
        work: W,
    ) -> Result<Submitted, ApiError>
    where
        W: Future<Output = Result<(), JobError>> + Send + 'static,
    {
        let inner = &self.0;
        let mut in_flight = inner.in_flight.lock().expect("in-flight table");
        if inner.store.get(&key)?.is_some() {
            let job = inner
                .jobs
                .create_succeeded(kind, subject, &principal.id, result_ref);
            return Ok(Submitted { job, cached: true });
        }
        if let Some(job) = in_flight
            .get(&key)
            .and_then(|id| inner.jobs.add_owner(id, &principal.id))
        {
            return Ok(Submitted { job, cached: false });
        }
        let job = inner.jobs.create(kind, subject, &principal.id);
        in_flight.insert(key.clone(), job.id.clone());
        drop(in_flight);

        let state = self.clone();
        let job_id = job.id.clone();
        tokio::spawn(async move {
            let permit = state.0.workers.clone().acquire_owned().await;
            let jobs = &state.0.jobs;
            if let Err(e) = jobs.transition(&job_id, JobState::Running, None, None) {
                tracing::error!(job_id, error = %e, "job could not start");
            }
            let outcome = work.await;
            drop(permit);
            state
                .0
                .in_flight
                .lock()
                .expect("in-flight table")
                .remove(&key);
            let result = match outcome {
                Ok(()) => {
                    tracing::info!(job_id, "job succeeded");
                    jobs.transition(&job_id, JobState::Succeeded, Some(result_ref), None)
                }
                Err(err) => {
                    tracing::warn!(job_id, code = %err.code, error = %err.message, "job failed");
                    jobs.transition(&job_id, JobState::Failed, None, Some(err))
                }
            };
            if let Err(e) = result {
                tracing::error!(job_id, error = %e, "job could not finish");
            }
        });
        Ok(Submitted { job, cached: false })
    }

    pub fn personalize(
        &self,
        principal: &Principal,
        course_id: &str,
        persona: Persona,
    ) -> Result<Submitted, ApiError> {
        principal.require(Role::Student)?;
        let course = self
            .0
            .courses
            .get(course_id)
            .filter(|r| r.published)
            .ok_or_else(|| ApiError::not_found("course"))?
            .course;
        let persona_key = derive_persona_key(&persona).map_err(PipelineError::from)?;
        let cur_id = curriculum_id(&course, &persona_key);
        // Personas that normalize alike must produce identical prompts, so
        // the first spelling seen for a curriculum is the one prompted with.
        let (bundle, key) = self.with_artifacts(|a| {
            let persona = a
                .curricula
                .get(&cur_id)
                .map_or(persona, |r| r.persona.clone());
            let bundle = build_curriculum_prompt(
                &course,
                &persona,
                &self.0.templates,
                &self.0.config.params,
            )?;
            let key = CacheKey::curriculum(
                &course.id,
                &course.version_hash,
                &persona_key,
                &bundle.prompt_hash,
            );
            let entry = a
                .curricula
                .entry(cur_id.clone())
                .or_insert_with(|| CurriculumRef {
                    key: key.clone(),
                    persona,
                    owners: BTreeMap::new(),
                });
            entry.key = key.clone();
            entry.owners.entry(principal.id.clone()).or_insert(false);
            Ok::<_, ApiError>((bundle, key))
        })??;

        let subject = JobSubject {
            course_id: course.id.clone(),
            persona_key: persona_key.to_string(),
            curriculum_id: None,
            section_id: None,
            subsection_id: None,
        };
        let store = self.0.store.clone();
        let provider = self.0.provider.clone();
        let retry = self.0.config.retry;
        let work_key = key.clone();
        let work = async move {
            let generation = run_generation(&bundle, provider.as_ref(), &retry, |raw| {
                parse_curriculum_response(raw, &course, &persona_key)
            })
            .await
            .map_err(|e| job_error(&e))?;
            tracing::debug!(calls = generation.provider_calls, "curriculum generated");
            store
                .put(StoreRecord::new(work_key, &generation.value, generation.meta))
                .map_err(storage_error)
        };
        self.cache_or_enqueue(principal, key, JobKind::Curriculum, subject, cur_id, work)
    }

    pub fn get_job(&self, principal: &Principal, id: &str) -> Result<GenerationJob, ApiError> {
        self.0
            .jobs
            .get(id, &principal.id)
            .ok_or_else(|| ApiError::not_found("job"))
    }

    fn curriculum_ref(
        &self,
        principal: &Principal,
        id: &str,
    ) -> Result<(CurriculumRef, bool), ApiError> {
        let artifacts = self.0.artifacts.lock().expect("artifact index");
        artifacts
            .curricula
            .get(id)
            .and_then(|r| r.owners.get(&principal.id).map(|saved| (r.clone(), *saved)))
            .ok_or_else(|| ApiError::not_found("curriculum"))
    }

    /// The curriculum as `principal` sees it: saved state is per owner.
    fn load_curriculum(
        &self,
        principal: &Principal,
        id: &str,
    ) -> Result<(PersonalizedCurriculum, CurriculumRef), ApiError> {
        let (cref, saved) = self.curriculum_ref(principal, id)?;
        let record = self
            .0
            .store
            .get(&cref.key)?
            .ok_or_else(|| ApiError::not_found("curriculum"))?;
        let mut curriculum: PersonalizedCurriculum = record.decode()?;
        curriculum.state = if saved {
            CurriculumState::Saved
        } else {
            CurriculumState::Generated
        };
        Ok((curriculum, cref))
    }

    pub fn get_curriculum(
        &self,
        principal: &Principal,
        id: &str,
    ) -> Result<PersonalizedCurriculum, ApiError> {
        Ok(self.load_curriculum(principal, id)?.0)
    }

    /// Idempotent.
    pub fn save_curriculum(
        &self,
        principal: &Principal,
        id: &str,
    ) -> Result<PersonalizedCurriculum, ApiError> {
        principal.require(Role::Student)?;
        let (mut curriculum, _) = self.load_curriculum(principal, id)?;
        self.with_artifacts(|a| {
            if let Some(r) = a.curricula.get_mut(id) {
                r.owners.insert(principal.id.clone(), true);
            }
        })?;
        curriculum.save();
        Ok(curriculum)
    }

    pub fn request_content(
        &self,
        principal: &Principal,
        curriculum_id: &str,
        section_id: &str,
        subsection_id: &str,
    ) -> Result<Submitted, ApiError> {
        principal.require(Role::Student)?;
        let (curriculum, cref) = self.load_curriculum(principal, curriculum_id)?;
        let course = self
            .0
            .courses
            .get(&curriculum.course_id)
            .filter(|r| r.published)
            .ok_or_else(|| ApiError::not_found("course"))?
            .course;
        let bundle = build_content_prompt(
            &course,
            &curriculum,
            section_id,
            subsection_id,
            &cref.persona,
            &self.0.templates,
            &self.0.config.params,
        )?;
        let key = CacheKey::content(
            &course.id,
            &course.version_hash,
            &curriculum.persona_key,
            section_id,
            subsection_id,
            &bundle.prompt_hash,
        );
        let cnt_id = content_id(&key);
        self.with_artifacts(|a| {
            a.contents
                .entry(cnt_id.clone())
                .or_insert_with(|| ContentRef {
                    key: key.clone(),
                    owners: BTreeSet::new(),
                })
                .owners
                .insert(principal.id.clone());
        })?;

        let subject = JobSubject {
            course_id: course.id.clone(),
            persona_key: curriculum.persona_key.to_string(),
            curriculum_id: Some(curriculum.id.clone()),
            section_id: Some(section_id.into()),
            subsection_id: Some(subsection_id.into()),
        };
        let store = self.0.store.clone();
        let provider = self.0.provider.clone();
        let retry = self.0.config.retry;
        let work_key = key.clone();
        let id = cnt_id.clone();
        let (section_id, subsection_id) = (section_id.to_string(), subsection_id.to_string());
        let work = async move {
            let generation =
                run_generation(&bundle, provider.as_ref(), &retry, parse_content_response)
                    .await
                    .map_err(|e| job_error(&e))?;
            let content = GeneratedContent {
                id,
                course_id: course.id.clone(),
                course_version_hash: course.version_hash.clone(),
                persona_key: curriculum.persona_key.clone(),
                curriculum_id: curriculum.id.clone(),
                section_id,
                subsection_id,
                body: generation.value.body,
                practices: generation.value.practices,
                meta: generation.meta.clone(),
            };
            store
                .put(StoreRecord::new(work_key, &content, generation.meta))
                .map_err(storage_error)
        };
        self.cache_or_enqueue(principal, key, JobKind::Content, subject, cnt_id, work)
    }

    fn load_content(&self, principal: &Principal, id: &str) -> Result<GeneratedContent, ApiError> {
        let key = {
            let artifacts = self.0.artifacts.lock().expect("artifact index");
            artifacts
                .contents
                .get(id)
                .filter(|r| r.owners.contains(&principal.id))
                .map(|r| r.key.clone())
                .ok_or_else(|| ApiError::not_found("content"))?
        };
        let record = self
            .0
            .store
            .get(&key)?
            .ok_or_else(|| ApiError::not_found("content"))?;
        Ok(record.decode()?)
    }

    /// Content as JSON; answers are withheld unless configured otherwise.
    pub fn get_content(&self, principal: &Principal, id: &str) -> Result<Value, ApiError> {
        let content = self.load_content(principal, id)?;
        let mut value = serde_json::to_value(&content).expect("content serializes");
        if !self.0.config.reveal_answers {
            withhold_answers(&mut value);
        }
        Ok(value)
    }

    pub fn submit_answer(
        &self,
        principal: &Principal,
        content_id: &str,
        practice_id: &str,
        chosen_index: usize,
    ) -> Result<GradeResult, ApiError> {
        principal.require(Role::Student)?;
        let content = self.load_content(principal, content_id)?;
        let practice = content
            .practice(practice_id)
            .ok_or_else(|| ApiError::not_found("practice"))?;
        let grade = grade_answer(practice, chosen_index)?;
        self.record_attempt(Attempt {
            principal_id: principal.id.clone(),
            content_id: content_id.into(),
            practice_id: practice_id.into(),
            chosen_index,
            correct: grade.correct,
            at: Utc::now(),
        })?;
        Ok(grade)
    }

    fn record_attempt(&self, attempt: Attempt) -> Result<(), ApiError> {
        let mut log = self.0.attempts.lock().expect("attempt log");
        if let Some(path) = &self.0.attempts_file {
            use std::io::Write;
            let mut line = serde_json::to_vec(&attempt).expect("attempt serializes");
            line.push(b'\n');
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(&line))
                .map_err(|e| {
                    tracing::error!(error = %e, "writing attempt log");
                    ApiError::internal("storage failure")
                })?;
        }
        log.push(attempt);
        Ok(())
    }
}

fn withhold_answers(content: &mut Value) {
    let Some(practices) = content.get_mut("practices").and_then(Value::as_array_mut) else {
        return;
    };
    for practice in practices {
        if let Some(p) = practice.as_object_mut() {
            p.remove("correct_index");
            if let Some(choices) = p.get_mut("choices").and_then(Value::as_array_mut) {
                for choice in choices {
                    if let Some(c) = choice.as_object_mut() {
                        c.remove("feedback");
                    }
                }
            }
        }
    }
}

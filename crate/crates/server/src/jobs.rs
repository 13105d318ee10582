//! Generation jobs and their state machine.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Curriculum,
    Content,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed)
    }

    /// The only permitted edges.
    pub fn can_move_to(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (Self::Queued, Self::Running)
                | (Self::Running, Self::Succeeded)
                | (Self::Running, Self::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSubject {
    pub course_id: String,
    pub persona_key: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curriculum_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub section_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsection_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub id: String,
    pub kind: JobKind,
    pub subject: JobSubject,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JobTransitionError {
    #[error("unknown job")]
    Unknown,
    #[error("illegal transition {from:?} -> {to:?}")]
    Illegal { from: JobState, to: JobState },
}

struct Entry {
    job: GenerationJob,
    owners: BTreeSet<String>,
    history: Vec<JobState>,
}

/// In-memory job table. Every state change goes through [`JobRegistry::transition`].
#[derive(Default)]
pub struct JobRegistry {
    jobs: Mutex<HashMap<String, Entry>>,
}

fn job_id() -> String {
    let mut bytes = [0u8; 12];
    rand::rng().fill_bytes(&mut bytes);
    format!("job-{}", hex::encode(bytes))
}

impl JobRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, kind: JobKind, subject: JobSubject, owner: &str) -> GenerationJob {
        let now = Utc::now();
        let job = GenerationJob {
            id: job_id(),
            kind,
            subject,
            state: JobState::Queued,
            result_ref: None,
            error: None,
            created_at: now,
            updated_at: now,
        };
        let entry = Entry {
            job: job.clone(),
            owners: BTreeSet::from([owner.to_string()]),
            history: vec![JobState::Queued],
        };
        self.jobs.lock().expect("job table").insert(job.id.clone(), entry);
        job
    }

    /// A job for work that needed no generation: walks the full state
    /// machine at once so even cached results follow the normal path.
    pub fn create_succeeded(
        &self,
        kind: JobKind,
        subject: JobSubject,
        owner: &str,
        result_ref: String,
    ) -> GenerationJob {
        let job = self.create(kind, subject, owner);
        self.transition(&job.id, JobState::Running, None, None)
            .expect("fresh job starts");
        self.transition(&job.id, JobState::Succeeded, Some(result_ref), None)
            .expect("running job succeeds")
    }

    pub fn transition(
        &self,
        id: &str,
        to: JobState,
        result_ref: Option<String>,
        error: Option<JobError>,
    ) -> Result<GenerationJob, JobTransitionError> {
        let mut jobs = self.jobs.lock().expect("job table");
        let entry = jobs.get_mut(id).ok_or(JobTransitionError::Unknown)?;
        let from = entry.job.state;
        if !from.can_move_to(to) {
            return Err(JobTransitionError::Illegal { from, to });
        }
        entry.job.state = to;
        entry.job.updated_at = Utc::now();
        if to == JobState::Succeeded {
            entry.job.result_ref = result_ref;
        }
        if to == JobState::Failed {
            entry.job.error = error;
        }
        entry.history.push(to);
        Ok(entry.job.clone())
    }

    pub fn add_owner(&self, id: &str, owner: &str) -> Option<GenerationJob> {
        let mut jobs = self.jobs.lock().expect("job table");
        let entry = jobs.get_mut(id)?;
        entry.owners.insert(owner.to_string());
        Some(entry.job.clone())
    }

    /// Snapshot, visible only to owners.
    pub fn get(&self, id: &str, owner: &str) -> Option<GenerationJob> {
        let jobs = self.jobs.lock().expect("job table");
        jobs.get(id)
            .filter(|e| e.owners.contains(owner))
            .map(|e| e.job.clone())
    }

    /// Every state the job has been in, in order.
    pub fn history(&self, id: &str) -> Option<Vec<JobState>> {
        let jobs = self.jobs.lock().expect("job table");
        jobs.get(id).map(|e| e.history.clone())
    }

    pub fn len(&self) -> usize {
        self.jobs.lock().expect("job table").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

//! Storage for generated artifacts, keyed so that identical requests are
//! served without calling the provider again.
//!
//! A key captures the course version, the persona and the prompt hash, so an
//! edit to the course, a different persona, or a new template or parameter
//! set all produce new keys. Old entries are unreachable rather than stale.

mod file;
mod memory;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::course_io::{canonicalize_json, to_canonical_json};
use crate::digest::Digest;
use crate::model::{GenerationMeta, PersonaKey};

pub use file::FileStore;
pub use memory::MemoryStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Curriculum,
    Content,
}

/// Field order is the sort order used for listings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheKey {
    pub course_id: String,
    pub course_version_hash: Digest,
    pub persona_key: PersonaKey,
    pub stage: Stage,
    /// Empty for the curriculum stage.
    pub section_id: String,
    /// Empty for the curriculum stage.
    pub subsection_id: String,
    pub prompt_hash: Digest,
}

impl CacheKey {
    pub fn curriculum(
        course_id: &str,
        course_version_hash: &Digest,
        persona_key: &PersonaKey,
        prompt_hash: &Digest,
    ) -> Self {
        Self {
            course_id: course_id.into(),
            course_version_hash: course_version_hash.clone(),
            persona_key: persona_key.clone(),
            stage: Stage::Curriculum,
            section_id: String::new(),
            subsection_id: String::new(),
            prompt_hash: prompt_hash.clone(),
        }
    }

    pub fn content(
        course_id: &str,
        course_version_hash: &Digest,
        persona_key: &PersonaKey,
        section_id: &str,
        subsection_id: &str,
        prompt_hash: &Digest,
    ) -> Self {
        Self {
            course_id: course_id.into(),
            course_version_hash: course_version_hash.clone(),
            persona_key: persona_key.clone(),
            stage: Stage::Content,
            section_id: section_id.into(),
            subsection_id: subsection_id.into(),
            prompt_hash: prompt_hash.clone(),
        }
    }

    /// Digest of the canonical key serialization; names the record on disk.
    pub fn digest(&self) -> Digest {
        Digest::of(to_canonical_json(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub key: CacheKey,
    /// Canonical JSON of the stored artifact.
    pub payload: Vec<u8>,
    pub meta: GenerationMeta,
}

impl StoreRecord {
    pub fn new<T: Serialize>(key: CacheKey, artifact: &T, meta: GenerationMeta) -> Self {
        Self {
            key,
            payload: to_canonical_json(artifact),
            meta,
        }
    }

    pub fn decode<T: serde::de::DeserializeOwned>(&self) -> Result<T, StoreError> {
        serde_json::from_slice(&self.payload)
            .map_err(|e| StoreError::InvalidRecord(format!("payload does not decode: {e}")))
    }

    fn check(&self) -> Result<(), StoreError> {
        match canonicalize_json(&self.payload) {
            Ok(canonical) if canonical == self.payload => Ok(()),
            Ok(_) => Err(StoreError::InvalidRecord(
                "payload is not in canonical JSON form".into(),
            )),
            Err(e) => Err(StoreError::InvalidRecord(format!(
                "payload is not JSON: {e}"
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store configuration: {0}")]
    Config(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("storage I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub trait ContentStore: Send + Sync {
    fn get(&self, key: &CacheKey) -> Result<Option<StoreRecord>, StoreError>;

    /// Last writer wins for equal keys.
    fn put(&self, record: StoreRecord) -> Result<(), StoreError>;

    /// Removes every record for this course version; returns how many.
    fn invalidate_course_version(
        &self,
        course_id: &str,
        version_hash: &Digest,
    ) -> Result<usize, StoreError>;

    /// All keys, in `CacheKey` order.
    fn keys(&self) -> Result<Vec<CacheKey>, StoreError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum StoreConfig {
    Memory,
    File { root: PathBuf },
}

pub fn open_store(config: &StoreConfig) -> Result<Arc<dyn ContentStore>, StoreError> {
    Ok(match config {
        StoreConfig::Memory => Arc::new(MemoryStore::new()),
        StoreConfig::File { root } => Arc::new(FileStore::open(root)?),
    })
}

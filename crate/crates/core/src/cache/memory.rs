use std::collections::BTreeMap;
use std::sync::RwLock;

use super::{CacheKey, ContentStore, StoreError, StoreRecord};
use crate::digest::Digest;

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: RwLock<BTreeMap<CacheKey, StoreRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ContentStore for MemoryStore {
    fn get(&self, key: &CacheKey) -> Result<Option<StoreRecord>, StoreError> {
        Ok(self.records.read().expect("store lock").get(key).cloned())
    }

    fn put(&self, record: StoreRecord) -> Result<(), StoreError> {
        record.check()?;
        self.records
            .write()
            .expect("store lock")
            .insert(record.key.clone(), record);
        Ok(())
    }

    fn invalidate_course_version(
        &self,
        course_id: &str,
        version_hash: &Digest,
    ) -> Result<usize, StoreError> {
        let mut records = self.records.write().expect("store lock");
        let before = records.len();
        records.retain(|k, _| !(k.course_id == course_id && &k.course_version_hash == version_hash));
        Ok(before - records.len())
    }

    fn keys(&self) -> Result<Vec<CacheKey>, StoreError> {
        Ok(self.records.read().expect("store lock").keys().cloned().collect())
    }
}

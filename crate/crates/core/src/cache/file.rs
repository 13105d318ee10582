//! One file per record under `<root>/<2-hex shard>/<key-digest>.rec`.
//!
//! A record file is a single line of compact JSON header (key, meta, payload
//! length and digest) followed by the payload bytes. Files are written to a
//! temporary name and renamed into place, so readers never see a torn
//! record. `index.json` lists every key for operators; it is rebuilt from
//! the record files on open.

use std::collections::BTreeMap;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CacheKey, ContentStore, StoreError, StoreRecord};
use crate::course_io::to_canonical_json;
use crate::digest::Digest;
use crate::model::GenerationMeta;

const RECORD_EXT: &str = "rec";
const INDEX_FILE: &str = "index.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordHeader {
    key: CacheKey,
    meta: GenerationMeta,
    payload_len: usize,
    payload_sha256: Digest,
}

#[derive(Serialize)]
struct IndexEntry<'a> {
    digest: &'a Digest,
    key: &'a CacheKey,
}

pub struct FileStore {
    root: PathBuf,
    index: Mutex<BTreeMap<CacheKey, Digest>>,
    tmp_counter: AtomicU64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        if root.as_os_str().is_empty() {
            return Err(StoreError::Config("file store root must not be empty".into()));
        }
        if root.exists() && !root.is_dir() {
            return Err(StoreError::Config(format!(
                "{} exists and is not a directory",
                root.display()
            )));
        }
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let store = Self {
            root,
            index: Mutex::new(BTreeMap::new()),
            tmp_counter: AtomicU64::new(0),
        };
        let index = store.scan()?;
        *store.index.lock().expect("index lock") = index;
        store.write_index()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_path(&self, key: &CacheKey) -> PathBuf {
        let digest = key.digest();
        self.root
            .join(digest.prefix(2))
            .join(format!("{digest}.{RECORD_EXT}"))
    }

    fn scan(&self) -> Result<BTreeMap<CacheKey, Digest>, StoreError> {
        let mut index = BTreeMap::new();
        for shard in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let shard = shard.map_err(io_err(&self.root))?.path();
            if !shard.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&shard).map_err(io_err(&shard))? {
                let path = entry.map_err(io_err(&shard))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some(RECORD_EXT) {
                    continue;
                }
                if let Some(record) = self.read_record(&path, None)? {
                    let digest = record.key.digest();
                    index.insert(record.key, digest);
                }
            }
        }
        Ok(index)
    }

    /// Reads a record file. A missing file is a miss; an unreadable or
    /// inconsistent one is logged, removed, and also treated as a miss.
    fn read_record(
        &self,
        path: &Path,
        expected: Option<&CacheKey>,
    ) -> Result<Option<StoreRecord>, StoreError> {
        let bytes = match fs::read(path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(path)(e)),
        };
        match decode_record(&bytes) {
            Ok(record) if expected.is_none_or(|k| *k == record.key) => Ok(Some(record)),
            Ok(_) => {
                self.discard(path, "key does not match the file name");
                Ok(None)
            }
            Err(reason) => {
                self.discard(path, &reason);
                Ok(None)
            }
        }
    }

    fn discard(&self, path: &Path, reason: &str) {
        tracing::warn!(path = %path.display(), reason, "discarding corrupt cache record");
        if let Err(e) = fs::remove_file(path) {
            if e.kind() != ErrorKind::NotFound {
                tracing::warn!(path = %path.display(), error = %e, "could not remove corrupt record");
            }
        }
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().expect("record paths have a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(
            ".{}.{}.{n}.tmp",
            path.file_name().and_then(|f| f.to_str()).unwrap_or("record"),
            std::process::id()
        ));
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        drop(file);
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let index = self.index.lock().expect("index lock");
        let entries: Vec<IndexEntry> = index
            .iter()
            .map(|(key, digest)| IndexEntry { digest, key })
            .collect();
        let bytes = to_canonical_json(&entries);
        // Written under the lock so a stale snapshot never overwrites a newer one.
        self.write_atomic(&self.root.join(INDEX_FILE), &bytes)
    }
}

fn encode_record(record: &StoreRecord) -> Vec<u8> {
    let header = RecordHeader {
        key: record.key.clone(),
        meta: record.meta.clone(),
        payload_len: record.payload.len(),
        payload_sha256: Digest::of(&record.payload),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.extend_from_slice(&record.payload);
    bytes
}

fn decode_record(bytes: &[u8]) -> Result<StoreRecord, String> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header line")?;
    let header: RecordHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| format!("bad header: {e}"))?;
    let payload = &bytes[split + 1..];
    if payload.len() != header.payload_len {
        return Err(format!(
            "payload length {} does not match header {}",
            payload.len(),
            header.payload_len
        ));
    }
    if Digest::of(payload) != header.payload_sha256 {
        return Err("payload digest mismatch".into());
    }
    Ok(StoreRecord {
        key: header.key,
        payload: payload.to_vec(),
        meta: header.meta,
    })
}

impl ContentStore for FileStore {
    fn get(&self, key: &CacheKey) -> Result<Option<StoreRecord>, StoreError> {
        let record = self.read_record(&self.record_path(key), Some(key))?;
        if record.is_none() {
            let removed = self.index.lock().expect("index lock").remove(key).is_some();
            if removed {
                self.write_index()?;
            }
        }
        Ok(record)
    }

    fn put(&self, record: StoreRecord) -> Result<(), StoreError> {
        record.check()?;
        let path = self.record_path(&record.key);
        self.write_atomic(&path, &encode_record(&record))?;
        let digest = record.key.digest();
        self.index
            .lock()
            .expect("index lock")
            .insert(record.key, digest);
        self.write_index()
    }

    fn invalidate_course_version(
        &self,
        course_id: &str,
        version_hash: &Digest,
    ) -> Result<usize, StoreError> {
        let doomed: Vec<CacheKey> = self
            .index
            .lock()
            .expect("index lock")
            .keys()
            .filter(|k| k.course_id == course_id && &k.course_version_hash == version_hash)
            .cloned()
            .collect();
        let mut removed = 0;
        for key in &doomed {
            let path = self.record_path(key);
            match fs::remove_file(&path) {
                Ok(()) => removed += 1,
                Err(e) if e.kind() == ErrorKind::NotFound => {}
                Err(e) => return Err(io_err(&path)(e)),
            }
            self.index.lock().expect("index lock").remove(key);
        }
        self.write_index()?;
        Ok(removed)
    }

    fn keys(&self) -> Result<Vec<CacheKey>, StoreError> {
        Ok(self.index.lock().expect("index lock").keys().cloned().collect())
    }
}

//! File-backed workspace persistence.
//!
//! Layout under the workspace root:
//!
//! ```text
//! <root>/
//!   .writer.lock          held while a mutation is in progress
//!   counter.json          monotonically increasing creation counter
//!   <kind>/index.json     ordered list of record ids
//!   <kind>/<id>.json      {"schema_version": 1, "record": {...}}
//!   <kind>/<id>.sha256    hex SHA-256 of the .json file bytes
//!   exports/<export_id>/  training exports
//! ```
//!
//! Readers never take the lock. Every mutation goes through [`Store::write`],
//! which serialises writers within the process and across processes.

mod export;
mod records;

pub use export::{
    export_id, export_training, split_indices, training_line, ExportCounts, ExportError,
    ExportManifest, ExportResult, SplitSpec, MANIFEST_FILE, SPLIT_FILES,
};
pub use records::{DatasetRecord, DatasetSummary, FailureKind, GenerationFailure, QAPair};

use crate::ids::sha256_hex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
const LOCK_FILE: &str = ".writer.lock";
const COUNTER_FILE: &str = "counter.json";
const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} '{id}' not found")]
    NotFound { kind: &'static str, id: String },
    #[error("corrupt record at {}: {reason}", path.display())]
    CorruptRecord { path: PathBuf, reason: String },
    #[error("workspace {} is locked by another writer", path.display())]
    WorkspaceLocked { path: PathBuf },
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl StoreError {
    fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// A persisted record kind.
pub trait Record: Serialize + DeserializeOwned {
    /// Subdirectory name, also used in error messages.
    const KIND: &'static str;

    fn record_id(&self) -> &str;
}

#[derive(Serialize, Deserialize)]
struct Envelope<R> {
    schema_version: u32,
    record: R,
}

#[derive(Serialize, Deserialize, Default)]
struct Counter {
    next: u64,
}

/// Handle to a workspace directory.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    writer: Mutex<()>,
    lock_timeout: Duration,
}

impl Store {
    /// Open (creating if needed) a workspace rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| StoreError::io(&root, e))?;
        Ok(Store {
            root,
            writer: Mutex::new(()),
            lock_timeout: Duration::from_secs(2),
        })
    }

    /// How long a writer waits for the workspace lock before giving up.
    pub fn with_lock_timeout(mut self, timeout: Duration) -> Self {
        self.lock_timeout = timeout;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn exports_dir(&self) -> PathBuf {
        self.root.join("exports")
    }

    fn kind_dir(&self, kind: &str) -> PathBuf {
        self.root.join(kind)
    }

    fn record_path(&self, kind: &str, id: &str) -> PathBuf {
        self.kind_dir(kind).join(format!("{id}.json"))
    }

    fn checksum_path(&self, kind: &str, id: &str) -> PathBuf {
        self.kind_dir(kind).join(format!("{id}.sha256"))
    }

    /// Load one record, verifying its checksum.
    pub fn load<R: Record>(&self, id: &str) -> Result<R> {
        self.try_load(id)?.ok_or_else(|| StoreError::NotFound {
            kind: R::KIND,
            id: id.to_string(),
        })
    }

    pub fn try_load<R: Record>(&self, id: &str) -> Result<Option<R>> {
        if !valid_id(id) {
            return Ok(None);
        }
        let path = self.record_path(R::KIND, id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let sum_path = self.checksum_path(R::KIND, id);
        let expected = fs::read_to_string(&sum_path).map_err(|e| StoreError::CorruptRecord {
            path: path.clone(),
            reason: format!("missing checksum sidecar: {e}"),
        })?;
        if expected.trim() != sha256_hex(&bytes) {
            return Err(StoreError::CorruptRecord {
                path,
                reason: "checksum mismatch".into(),
            });
        }
        let env: Envelope<R> =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptRecord {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        if env.schema_version != SCHEMA_VERSION {
            return Err(StoreError::CorruptRecord {
                path,
                reason: format!("unsupported schema_version {}", env.schema_version),
            });
        }
        Ok(Some(env.record))
    }

    /// Raw serialized bytes of a record, as stored on disk.
    pub fn raw_bytes<R: Record>(&self, id: &str) -> Result<Vec<u8>> {
        let path = self.record_path(R::KIND, id);
        fs::read(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StoreError::NotFound {
                kind: R::KIND,
                id: id.to_string(),
            },
            _ => StoreError::io(&path, e),
        })
    }

    /// Ids of all records of a kind, in insertion order.
    pub fn list_ids<R: Record>(&self) -> Result<Vec<String>> {
        read_index(&self.kind_dir(R::KIND))
    }

    pub fn list<R: Record>(&self) -> Result<Vec<R>> {
        self.list_ids::<R>()?
            .iter()
            .map(|id| self.load::<R>(id))
            .collect()
    }

    /// Run `f` while holding the workspace writer lock.
    pub fn write<T, E>(&self, f: impl FnOnce(&mut Writer<'_>) -> Result<T, E>) -> Result<T, E>
    where
        E: From<StoreError>,
    {
        let _local = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let _file_lock = FileLock::acquire(&self.root.join(LOCK_FILE), self.lock_timeout)?;
        let mut writer = Writer { store: self };
        f(&mut writer)
    }

    /// Save a single record under the writer lock.
    pub fn save<R: Record>(&self, record: &R) -> Result<()> {
        self.write(|w| w.save(record))
    }

    /// Delete a single record under the writer lock.
    pub fn delete<R: Record>(&self, id: &str) -> Result<()> {
        self.write(|w| w.delete::<R>(id))
    }
}

/// Mutation handle, only obtainable through [`Store::write`].
pub struct Writer<'a> {
    store: &'a Store,
}

impl Writer<'_> {
    pub fn store(&self) -> &Store {
        self.store
    }

    /// Next value of the workspace creation counter.
    pub fn next_counter(&mut self) -> Result<u64> {
        let path = self.store.root.join(COUNTER_FILE);
        let mut counter: Counter = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptRecord {
                path: path.clone(),
                reason: e.to_string(),
            })?,
            Err(e) if e.kind() == ErrorKind::NotFound => Counter::default(),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let value = counter.next;
        counter.next += 1;
        write_atomic(&path, &serde_json::to_vec(&counter)?)?;
        Ok(value)
    }

    pub fn save<R: Record>(&mut self, record: &R) -> Result<()> {
        let id = record.record_id();
        if !valid_id(id) {
            return Err(StoreError::CorruptRecord {
                path: self.store.record_path(R::KIND, id),
                reason: "invalid record id".into(),
            });
        }
        let dir = self.store.kind_dir(R::KIND);
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        let bytes = serde_json::to_vec_pretty(&Envelope {
            schema_version: SCHEMA_VERSION,
            record,
        })?;
        write_atomic(&self.store.record_path(R::KIND, id), &bytes)?;
        write_atomic(
            &self.store.checksum_path(R::KIND, id),
            sha256_hex(&bytes).as_bytes(),
        )?;
        let mut index = read_index(&dir)?;
        if !index.iter().any(|x| x == id) {
            index.push(id.to_string());
            write_atomic(&dir.join(INDEX_FILE), &serde_json::to_vec_pretty(&index)?)?;
        }
        Ok(())
    }

    /// Remove a record. Deleting a missing record is `NotFound`.
    pub fn delete<R: Record>(&mut self, id: &str) -> Result<()> {
        let path = self.store.record_path(R::KIND, id);
        if !valid_id(id) || !path.exists() {
            return Err(StoreError::NotFound {
                kind: R::KIND,
                id: id.to_string(),
            });
        }
        fs::remove_file(&path).map_err(|e| StoreError::io(&path, e))?;
        let sum = self.store.checksum_path(R::KIND, id);
        match fs::remove_file(&sum) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => return Err(StoreError::io(&sum, e)),
        }
        let dir = self.store.kind_dir(R::KIND);
        let mut index = read_index(&dir)?;
        index.retain(|x| x != id);
        write_atomic(&dir.join(INDEX_FILE), &serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn read_index(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(INDEX_FILE);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptRecord {
            path,
            reason: e.to_string(),
        }),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(StoreError::io(path, e)),
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut file = fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
    file.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}

struct FileLock {
    path: PathBuf,
}

impl FileLock {
    fn acquire(path: &Path, timeout: Duration) -> Result<Self> {
        let deadline = Instant::now() + timeout;
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(FileLock {
                        path: path.to_path_buf(),
                    });
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    if lock_is_stale(path) {
                        let _ = fs::remove_file(path);
                        continue;
                    }
                    if Instant::now() >= deadline {
                        return Err(StoreError::WorkspaceLocked {
                            path: path.parent().unwrap_or(path).to_path_buf(),
                        });
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(StoreError::io(path, e)),
            }
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A lock whose owning process no longer exists.
fn lock_is_stale(path: &Path) -> bool {
    let Ok(contents) = fs::read_to_string(path) else {
        return false;
    };
    match contents.trim().parse::<u32>() {
        Ok(pid) => !crate::trainjobs::process_alive(pid),
        // Written but not yet filled in by its owner.
        Err(_) => false,
    }
}

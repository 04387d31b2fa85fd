//! Durable, versioned, watchable per-job records.
//!
//! One record per job, stored as `<root>/<namespace>/<name>.record` with a
//! `version` counter and a string map `data`. Writes are optimistic
//! (compare-and-swap on the version) and crash-safe: write temp, fsync,
//! rename. A sibling `.lock` file is flock-ed around each mutation so
//! operator and worker processes can share a store root safely.
//!
//! Watchers receive every mutation committed through handles in the same
//! process, exactly once, in version order per key. The channel ends when
//! the store is dropped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use fs2::FileExt;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::state::BridgeState;

/// Record data field names. The worker's execution parameters ride in the
/// same map as the live status fields.
pub mod keys {
    pub const RESOURCE_URL: &str = "resourceURL";
    pub const ID: &str = "id";
    pub const JOB_STATUS: &str = "jobStatus";
    pub const MESSAGE: &str = "message";
    pub const KILL: &str = "kill";
    pub const START_TIME: &str = "startTime";
    pub const END_TIME: &str = "endTime";
    pub const ADAPTER: &str = "adapter";
    pub const RESOURCE_SECRET: &str = "resourcesecret";
    pub const UPDATE_INTERVAL: &str = "updateinterval";
    pub const JOB_SCRIPT: &str = "jobscript";
    pub const SCRIPT_LOCATION: &str = "scriptlocation";
    pub const SCRIPT_MD: &str = "scriptmd";
    pub const SCRIPT_EXTRA_LOC: &str = "scriptextraloc";
    pub const ADDITIONAL_DATA: &str = "additionaldata";
    pub const JOB_PROPERTIES: &str = "jobproperties";
    pub const JOB_PARAMS: &str = "jobparams";
    pub const S3_SECRET: &str = "s3secret";
    pub const S3_ENDPOINT: &str = "s3endpoint";
    pub const S3_SECURE: &str = "s3secure";
    pub const S3_UPLOAD_BUCKET: &str = "s3uploadbucket";
    pub const S3_UPLOAD_FILES: &str = "s3uploadfiles";
    pub const CLIENT_JOB_NAME: &str = "clientJobName";
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobKey {
    pub namespace: String,
    pub name: String,
}

impl JobKey {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>) -> Self {
        JobKey {
            namespace: namespace.into(),
            name: name.into(),
        }
    }
}

impl std::fmt::Display for JobKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.namespace, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub key: JobKey,
    pub version: u64,
    pub data: BTreeMap<String, String>,
}

impl JobRecord {
    /// Field value, empty string when absent.
    pub fn get(&self, key: &str) -> &str {
        self.data.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn status(&self) -> Option<BridgeState> {
        self.get(keys::JOB_STATUS).parse().ok()
    }

    pub fn kill_requested(&self) -> bool {
        self.get(keys::KILL) == "true"
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record {0} already exists")]
    AlreadyExists(JobKey),
    #[error("record {0} not found")]
    NotFound(JobKey),
    #[error("version conflict on {key}: expected {expected}, current {actual}")]
    VersionConflict {
        key: JobKey,
        expected: u64,
        actual: u64,
    },
    #[error("invalid record mutation: {0}")]
    InvalidRecord(String),
    #[error("record file {path} is corrupt: {detail}")]
    Corrupt { path: String, detail: String },
    #[error("store i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Created,
    Updated,
    Deleted,
}

#[derive(Debug, Clone)]
pub struct WatchEvent {
    pub kind: EventKind,
    pub record: JobRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WatchScope {
    All,
    Namespace(String),
    Key(JobKey),
}

impl WatchScope {
    fn matches(&self, key: &JobKey) -> bool {
        match self {
            WatchScope::All => true,
            WatchScope::Namespace(ns) => key.namespace == *ns,
            WatchScope::Key(k) => k == key,
        }
    }
}

/// Receiving half of a watch registration.
#[derive(Debug)]
pub struct Watch {
    rx: mpsc::UnboundedReceiver<WatchEvent>,
}

impl Watch {
    /// Next event; `None` once the store has shut down.
    pub async fn recv(&mut self) -> Option<WatchEvent> {
        self.rx.recv().await
    }

    pub fn try_recv(&mut self) -> Option<WatchEvent> {
        self.rx.try_recv().ok()
    }
}

#[derive(Debug)]
struct Watcher {
    scope: WatchScope,
    tx: mpsc::UnboundedSender<WatchEvent>,
}

/// File-backed record store rooted at one directory.
#[derive(Debug)]
pub struct StateStore {
    root: PathBuf,
    // Serializes every in-process mutation and the watcher registry; the
    // flock below extends the same exclusion across processes.
    inner: Mutex<Vec<Watcher>>,
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    version: u64,
    data: BTreeMap<String, String>,
}

impl StateStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| StoreError::io(&root, e))?;
        Ok(StateStore {
            root,
            inner: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, key: &JobKey) -> Result<PathBuf, StoreError> {
        for part in [&key.namespace, &key.name] {
            if part.is_empty() || part.contains('/') || part.contains("..") {
                return Err(StoreError::InvalidRecord(format!("unsafe key {key}")));
            }
        }
        Ok(self.root.join(&key.namespace).join(format!("{}.record", key.name)))
    }

    fn lock_path(path: &Path) -> PathBuf {
        path.with_extension("lock")
    }

    /// Exclusive cross-process lock for the key. Released on drop (and by the
    /// kernel if the process dies).
    fn acquire_flock(&self, path: &Path) -> Result<fs::File, StoreError> {
        let lock_path = Self::lock_path(path);
        if let Some(parent) = lock_path.parent() {
            fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .open(&lock_path)
            .map_err(|e| StoreError::io(&lock_path, e))?;
        file.lock_exclusive().map_err(|e| StoreError::io(&lock_path, e))?;
        Ok(file)
    }

    fn read_file(&self, key: &JobKey, path: &Path) -> Result<Option<JobRecord>, StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(StoreError::io(path, e)),
        };
        let parsed: RecordFile =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
        Ok(Some(JobRecord {
            key: key.clone(),
            version: parsed.version,
            data: parsed.data,
        }))
    }

    fn write_file(&self, path: &Path, record: &JobRecord) -> Result<(), StoreError> {
        let parent = path.parent().expect("record path has a parent");
        fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
        let body = serde_json::to_vec_pretty(&RecordFile {
            version: record.version,
            data: record.data.clone(),
        })
        .expect("record serializes");
        let tmp = path.with_extension("tmp");
        let mut file = fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        file.write_all(&body).map_err(|e| StoreError::io(&tmp, e))?;
        file.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))?;
        if let Ok(dir) = fs::File::open(parent) {
            let _ = dir.sync_all();
        }
        Ok(())
    }

    fn validate_delta(
        current: Option<&JobRecord>,
        delta: &BTreeMap<String, String>,
    ) -> Result<(), StoreError> {
        if let Some(status) = delta.get(keys::JOB_STATUS) {
            if status.parse::<BridgeState>().is_err() {
                return Err(StoreError::InvalidRecord(format!(
                    "jobStatus {status:?} is not a bridge state"
                )));
            }
        }
        if let (Some(current), Some(new_id)) = (current, delta.get(keys::ID)) {
            let old_id = current.get(keys::ID);
            if !old_id.is_empty() && new_id != old_id {
                return Err(StoreError::InvalidRecord(format!(
                    "id is immutable once set (current {old_id:?}, attempted {new_id:?})"
                )));
            }
        }
        Ok(())
    }

    fn notify(&self, watchers: &mut Vec<Watcher>, event: WatchEvent) {
        watchers.retain(|w| {
            if w.scope.matches(&event.record.key) {
                w.tx.send(event.clone()).is_ok()
            } else {
                !w.tx.is_closed()
            }
        });
    }

    /// Create the record at version 1. Fails if the key is already present.
    pub fn create_record(
        &self,
        key: &JobKey,
        data: BTreeMap<String, String>,
    ) -> Result<JobRecord, StoreError> {
        let path = self.record_path(key)?;
        let mut watchers = self.inner.lock().unwrap();
        let _flock = self.acquire_flock(&path)?;
        if self.read_file(key, &path)?.is_some() {
            return Err(StoreError::AlreadyExists(key.clone()));
        }
        Self::validate_delta(None, &data)?;
        let record = JobRecord {
            key: key.clone(),
            version: 1,
            data,
        };
        self.write_file(&path, &record)?;
        self.notify(
            &mut watchers,
            WatchEvent {
                kind: EventKind::Created,
                record: record.clone(),
            },
        );
        Ok(record)
    }

    pub fn get_record(&self, key: &JobKey) -> Result<JobRecord, StoreError> {
        let path = self.record_path(key)?;
        self.read_file(key, &path)?
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    /// Merge `delta` into the record if `expected_version` still matches.
    pub fn update_record(
        &self,
        key: &JobKey,
        delta: BTreeMap<String, String>,
        expected_version: u64,
    ) -> Result<JobRecord, StoreError> {
        let path = self.record_path(key)?;
        let mut watchers = self.inner.lock().unwrap();
        let _flock = self.acquire_flock(&path)?;
        let current = self
            .read_file(key, &path)?
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        if current.version != expected_version {
            return Err(StoreError::VersionConflict {
                key: key.clone(),
                expected: expected_version,
                actual: current.version,
            });
        }
        Self::validate_delta(Some(&current), &delta)?;
        let mut record = current;
        record.version += 1;
        for (k, v) in delta {
            record.data.insert(k, v);
        }
        self.write_file(&path, &record)?;
        self.notify(
            &mut watchers,
            WatchEvent {
                kind: EventKind::Updated,
                record: record.clone(),
            },
        );
        Ok(record)
    }

    /// Remove the record. Idempotent; watchers see one Deleted event when a
    /// record was actually removed.
    pub fn delete_record(&self, key: &JobKey) -> Result<(), StoreError> {
        let path = self.record_path(key)?;
        let mut watchers = self.inner.lock().unwrap();
        let _flock = self.acquire_flock(&path)?;
        let Some(last) = self.read_file(key, &path)? else {
            return Ok(());
        };
        fs::remove_file(&path).map_err(|e| StoreError::io(&path, e))?;
        self.notify(
            &mut watchers,
            WatchEvent {
                kind: EventKind::Deleted,
                record: last,
            },
        );
        Ok(())
    }

    /// Stream of committed mutations (this process) from this point onward.
    pub fn watch(&self, scope: WatchScope) -> Watch {
        let (tx, rx) = mpsc::unbounded_channel();
        self.inner.lock().unwrap().push(Watcher { scope, tx });
        Watch { rx }
    }

    /// Read-modify-CAS with bounded retries on version conflicts. The builder
    /// sees the current record and returns the delta to merge, or `None` for
    /// nothing-to-do.
    pub fn read_modify_write<F>(
        &self,
        key: &JobKey,
        max_retries: u32,
        build: F,
    ) -> Result<Option<JobRecord>, StoreError>
    where
        F: Fn(&JobRecord) -> Option<BTreeMap<String, String>>,
    {
        let mut attempts = 0;
        loop {
            let current = self.get_record(key)?;
            let Some(delta) = build(&current) else {
                return Ok(None);
            };
            match self.update_record(key, delta, current.version) {
                Ok(record) => return Ok(Some(record)),
                Err(StoreError::VersionConflict { .. }) if attempts < max_retries => {
                    attempts += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// All record keys currently on disk.
    pub fn list_keys(&self) -> Result<Vec<JobKey>, StoreError> {
        let mut keys = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(keys),
            Err(e) => return Err(StoreError::io(&self.root, e)),
        };
        for entry in entries.flatten() {
            let ns = entry.file_name().to_string_lossy().to_string();
            if !entry.path().is_dir() {
                continue;
            }
            for file in fs::read_dir(entry.path())
                .map_err(|e| StoreError::io(&entry.path(), e))?
                .flatten()
            {
                let name = file.file_name().to_string_lossy().to_string();
                if let Some(stem) = name.strip_suffix(".record") {
                    keys.push(JobKey::new(&ns, stem));
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn new_record_data() -> BTreeMap<String, String> {
        data(&[
            (keys::RESOURCE_URL, "http://127.0.0.1:1"),
            (keys::ID, ""),
            (keys::JOB_STATUS, "NEW"),
            (keys::KILL, "false"),
        ])
    }

    #[test]
    fn create_get_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "slurmjob-test");
        let created = store.create_record(&key, new_record_data()).unwrap();
        assert_eq!(created.version, 1);
        let got = store.get_record(&key).unwrap();
        assert_eq!(got, created);
    }

    #[test]
    fn create_twice_is_already_exists() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "j");
        store.create_record(&key, new_record_data()).unwrap();
        assert!(matches!(
            store.create_record(&key, new_record_data()),
            Err(StoreError::AlreadyExists(_))
        ));
    }

    #[test]
    fn survives_store_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let key = JobKey::new("ns", "j");
        {
            let store = StateStore::open(dir.path()).unwrap();
            store.create_record(&key, new_record_data()).unwrap();
            let r = store.get_record(&key).unwrap();
            store
                .update_record(&key, data(&[(keys::ID, "42"), (keys::JOB_STATUS, "SUBMITTED")]), r.version)
                .unwrap();
        }
        let store = StateStore::open(dir.path()).unwrap();
        let r = store.get_record(&key).unwrap();
        assert_eq!(r.version, 2);
        assert_eq!(r.get(keys::ID), "42");
        assert_eq!(r.status(), Some(BridgeState::Submitted));
    }

    #[test]
    fn cas_conflict_and_merge_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "j");
        store.create_record(&key, new_record_data()).unwrap();

        let v2 = store
            .update_record(&key, data(&[(keys::ID, "42"), (keys::JOB_STATUS, "SUBMITTED")]), 1)
            .unwrap();
        assert_eq!(v2.version, 2);
        assert_eq!(v2.get(keys::ID), "42");

        // Stale expected version leaves the record untouched.
        let err = store
            .update_record(&key, data(&[(keys::MESSAGE, "stale")]), 1)
            .unwrap_err();
        assert!(matches!(err, StoreError::VersionConflict { actual: 2, .. }));
        assert_eq!(store.get_record(&key).unwrap().get(keys::MESSAGE), "");

        // Merges overwrite listed keys only.
        let v3 = store
            .update_record(&key, data(&[(keys::MESSAGE, "x")]), 2)
            .unwrap();
        assert_eq!(v3.get(keys::ID), "42");
        assert_eq!(v3.get(keys::MESSAGE), "x");
    }

    #[test]
    fn version_counts_updates() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "j");
        store.create_record(&key, new_record_data()).unwrap();
        for expected in 1..=3 {
            store
                .update_record(&key, data(&[(keys::MESSAGE, &format!("m{expected}"))]), expected)
                .unwrap();
        }
        assert_eq!(store.get_record(&key).unwrap().version, 4);
    }

    #[test]
    fn id_is_immutable_once_set() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "j");
        store.create_record(&key, new_record_data()).unwrap();
        store.update_record(&key, data(&[(keys::ID, "42")]), 1).unwrap();
        let err = store.update_record(&key, data(&[(keys::ID, "43")]), 2).unwrap_err();
        assert!(matches!(err, StoreError::InvalidRecord(_)));
        // Re-writing the same id is fine.
        store.update_record(&key, data(&[(keys::ID, "42")]), 2).unwrap();
    }

    #[test]
    fn invalid_status_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "j");
        store.create_record(&key, new_record_data()).unwrap();
        let err = store
            .update_record(&key, data(&[(keys::JOB_STATUS, "EXPLODED")]), 1)
            .unwrap_err();
        assert!(matches!(err, StoreError::InvalidRecord(_)));
    }

    #[test]
    fn delete_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "j");
        store.create_record(&key, new_record_data()).unwrap();
        store.delete_record(&key).unwrap();
        assert!(matches!(store.get_record(&key), Err(StoreError::NotFound(_))));
        store.delete_record(&key).unwrap();
    }

    #[tokio::test]
    async fn watch_sees_ordered_events_and_deletion() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        let key = JobKey::new("ns", "j");
        let mut watch = store.watch(WatchScope::Key(key.clone()));

        store.create_record(&key, new_record_data()).unwrap();
        store.update_record(&key, data(&[(keys::ID, "7")]), 1).unwrap();
        store.update_record(&key, data(&[(keys::KILL, "true")]), 2).unwrap();
        store.delete_record(&key).unwrap();

        let e1 = watch.recv().await.unwrap();
        assert_eq!(e1.kind, EventKind::Created);
        assert_eq!(e1.record.version, 1);
        let e2 = watch.recv().await.unwrap();
        assert_eq!(e2.kind, EventKind::Updated);
        assert_eq!(e2.record.version, 2);
        let e3 = watch.recv().await.unwrap();
        assert_eq!(e3.record.get(keys::KILL), "true");
        assert_eq!(e3.record.version, 3);
        let e4 = watch.recv().await.unwrap();
        assert_eq!(e4.kind, EventKind::Deleted);
        assert!(watch.try_recv().is_none());
    }

    #[test]
    fn list_keys_walks_namespaces() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        store.create_record(&JobKey::new("a", "x"), new_record_data()).unwrap();
        store.create_record(&JobKey::new("b", "y"), new_record_data()).unwrap();
        assert_eq!(
            store.list_keys().unwrap(),
            vec![JobKey::new("a", "x"), JobKey::new("b", "y")]
        );
    }

    #[test]
    fn unsafe_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = StateStore::open(dir.path()).unwrap();
        assert!(store.get_record(&JobKey::new("..", "x")).is_err());
        assert!(store.get_record(&JobKey::new("a/b", "x")).is_err());
    }
}

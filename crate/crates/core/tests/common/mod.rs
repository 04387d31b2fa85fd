//! Shared harness for integration tests: temp store, credential files, a
//! manual clock and helpers to drive worker runs against the mocks.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use bridge_core::credentials::{write_resource_credentials, write_s3_credentials};
use bridge_core::spec::{BridgeJobSpec, JobData, S3Storage, S3Upload, ScriptLocation};
use bridge_core::worker::WorkerConfig;
use bridge_core::{AdapterKind, JobKey, ManualClock, StateStore};

pub const MOCK_USER: &str = "bridgeuser";
pub const MOCK_TOKEN: &str = "bridge-token";
pub const S3_ACCESS_KEY: &str = "bridgekey";
pub const S3_SECRET_KEY: &str = "bridgesecret";
pub const RESOURCE_SECRET: &str = "mysecret";
pub const S3_SECRET: &str = "mysecret-s3";

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub store: Arc<StateStore>,
    pub clock: Arc<ManualClock>,
}

impl Harness {
    pub fn new() -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(StateStore::open(dir.path().join("store")).unwrap());
        write_resource_credentials(&dir.path().join("credentials"), RESOURCE_SECRET, MOCK_USER, MOCK_TOKEN)
            .unwrap();
        write_s3_credentials(&dir.path().join("s3credentials"), S3_SECRET, S3_ACCESS_KEY, S3_SECRET_KEY)
            .unwrap();
        Harness {
            dir,
            store,
            clock: ManualClock::shared(),
        }
    }

    pub fn credentials_dir(&self) -> PathBuf {
        self.dir.path().join("credentials")
    }

    pub fn s3_credentials_dir(&self) -> PathBuf {
        self.dir.path().join("s3credentials")
    }

    pub fn downloads_dir(&self) -> PathBuf {
        self.dir.path().join("downloads")
    }

    pub fn worker_config(&self, key: &JobKey) -> WorkerConfig {
        let mut cfg = WorkerConfig::new(key.clone(), self.dir.path().join("store"), self.clock.clone());
        cfg.credentials_dir = self.credentials_dir();
        cfg.s3_credentials_dir = self.s3_credentials_dir();
        cfg.downloads_dir = self.downloads_dir();
        cfg
    }

    /// Create the job record the way the operator would.
    pub fn create_record(&self, spec: &BridgeJobSpec) -> JobKey {
        let key = spec.key();
        self.store
            .create_record(&key, spec.to_record_data("t0"))
            .unwrap();
        key
    }

    /// Advance the manual clock in steps, letting the worker take each poll,
    /// until `check` passes or `max_steps` elapse.
    pub async fn drive_until<F>(&self, step: Duration, max_steps: u32, mut check: F) -> bool
    where
        F: FnMut() -> bool,
    {
        for _ in 0..max_steps {
            if check() {
                return true;
            }
            self.clock.advance(step);
            settle().await;
        }
        check()
    }
}

/// Let woken tasks finish their poll (HTTP round trip on loopback).
pub async fn settle() -> () {
    tokio::time::sleep(Duration::from_millis(40)).await;
}

/// A BridgeJobSpec aimed at a mock manager: inline script, 1-second poll.
pub fn base_spec(name: &str, resource_url: &str, kind: AdapterKind) -> BridgeJobSpec {
    BridgeJobSpec {
        name: name.to_string(),
        namespace: "test".to_string(),
        resource_url: resource_url.to_string(),
        adapter_kind: kind,
        resource_secret: RESOURCE_SECRET.to_string(),
        image_pull_policy: "IfNotPresent".to_string(),
        update_interval: 1,
        job_data: JobData {
            job_script: "#!/bin/sh\necho hi\n".to_string(),
            script_location: Some(ScriptLocation::Inline),
            script_md: None,
            script_extra_loc: None,
            additional_data: Vec::new(),
            job_properties: BTreeMap::from([
                ("NodesNumber".to_string(), "1".to_string()),
                ("Tasks".to_string(), "2".to_string()),
                ("Queue".to_string(), "V100".to_string()),
                ("OutputFileName".to_string(), "slurmjob.out".to_string()),
            ]),
            job_params: BTreeMap::new(),
        },
        s3_storage: S3Storage::default(),
        s3_upload: S3Upload::default(),
    }
}

/// The jobStatus value sequence a record went through, consecutive
/// duplicates collapsed, extracted from drained watch events.
pub fn status_sequence(watch: &mut bridge_core::store::Watch) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    while let Some(event) = watch.try_recv() {
        let status = event.record.get(bridge_core::store::keys::JOB_STATUS).to_string();
        if out.last() != Some(&status) {
            out.push(status);
        }
    }
    out
}

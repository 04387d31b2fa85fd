//! Wire-level adapter behavior against the mocks: property translation,
//! auth flows, timeouts, file transfer.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use common::*;

use bridge_core::adapter::{new_adapter, AdapterError, ResourceAdapter};
use bridge_core::credentials::{CredentialSet, SecretString};
use bridge_core::staging::ResolvedScript;
use bridge_core::{AdapterKind, ManualClock};
use bridge_mocks::{ManagerKind, MockCredentials, MockManagerServer, Timeline};

fn mock_creds() -> CredentialSet {
    CredentialSet {
        username: MOCK_USER.to_string(),
        token: SecretString::new(MOCK_TOKEN),
        extra: BTreeMap::new(),
    }
}

fn sample_properties() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("NodesNumber".to_string(), "1".to_string()),
        ("Queue".to_string(), "V100".to_string()),
        ("Tasks".to_string(), "2".to_string()),
        ("slurmJobName".to_string(), "test".to_string()),
        ("currentWorkingDir".to_string(), "path-to-test/test-script/".to_string()),
        ("envLibPath".to_string(), "/usr/mpi/gcc/openmpi-4.0.3rc4/lib".to_string()),
        ("ErrorFileName".to_string(), "slurmjob.err".to_string()),
        ("OutputFileName".to_string(), "slurmjob.out".to_string()),
    ])
}

async fn spawn_slurm(clock: Arc<ManualClock>) -> MockManagerServer {
    MockManagerServer::spawn_slurm_manual(clock).await.unwrap()
}

#[tokio::test]
async fn slurm_submit_translates_sample_properties() {
    let clock = ManualClock::shared();
    let mock = spawn_slurm(clock).await;
    let adapter = new_adapter(AdapterKind::Slurm, &mock.base_url());
    let session = adapter.get_token(&mock_creds()).await.unwrap();

    let id = adapter
        .submit(
            &session,
            &ResolvedScript::Body("#!/bin/sh\n".to_string()),
            &sample_properties(),
            &BTreeMap::new(),
            "bridge-ns-translate-1",
        )
        .await
        .unwrap();

    let job = mock.core.job(id.parse().unwrap()).unwrap();
    assert_eq!(job.payload["nodes"], 1, "NodesNumber translates to an integer");
    assert_eq!(job.payload["ntasks"], 2);
    assert_eq!(job.payload["partition"], "V100");
    assert_eq!(job.payload["current_working_directory"], "path-to-test/test-script/");
    assert_eq!(job.payload["standard_error"], "slurmjob.err");
    assert_eq!(job.payload["standard_output"], "slurmjob.out");
    // Untranslated keys pass through; the client name beats slurmJobName.
    assert_eq!(job.payload["envLibPath"], "/usr/mpi/gcc/openmpi-4.0.3rc4/lib");
    assert_eq!(job.payload["name"], "bridge-ns-translate-1");
    assert_eq!(job.name, "bridge-ns-translate-1");
}

#[tokio::test]
async fn numeric_property_conversion_failure_is_a_submit_error() {
    let clock = ManualClock::shared();
    let mock = spawn_slurm(clock).await;
    let adapter = new_adapter(AdapterKind::Slurm, &mock.base_url());
    let session = adapter.get_token(&mock_creds()).await.unwrap();

    let mut properties = sample_properties();
    properties.insert("NodesNumber".to_string(), "two".to_string());
    let err = adapter
        .submit(
            &session,
            &ResolvedScript::Body(String::new()),
            &properties,
            &BTreeMap::new(),
            "bridge-ns-badnum",
        )
        .await
        .unwrap_err();
    assert!(matches!(err, AdapterError::InvalidProperties(_)), "{err}");
    assert_eq!(mock.core.jobs_named("bridge-ns-badnum"), 0);
}

#[tokio::test]
async fn slurm_token_roundtrip_and_rejection() {
    let clock = ManualClock::shared();
    let mock = spawn_slurm(clock).await;
    let adapter = new_adapter(AdapterKind::Slurm, &mock.base_url());

    let session = adapter.get_token(&mock_creds()).await.unwrap();
    // The session works for a subsequent submit.
    adapter
        .submit(
            &session,
            &ResolvedScript::Body(String::new()),
            &BTreeMap::new(),
            &BTreeMap::new(),
            "bridge-ns-auth-ok",
        )
        .await
        .unwrap();

    let mut bad = mock_creds();
    bad.token = SecretString::new("wrong-token");
    let err = adapter.get_token(&bad).await.unwrap_err();
    assert!(matches!(err, AdapterError::Auth), "{err}");
}

#[tokio::test]
async fn unreachable_manager_reports_within_the_timeout() {
    // Nothing listens on this port.
    let adapter = new_adapter(AdapterKind::Slurm, "http://127.0.0.1:9");
    let started = std::time::Instant::now();
    let err = adapter.get_token(&mock_creds()).await.unwrap_err();
    assert!(matches!(err, AdapterError::Unreachable(_)), "{err}");
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[tokio::test]
async fn lsf_session_flow_and_file_download() {
    let clock = ManualClock::shared();
    let mock = MockManagerServer::spawn(
        ManagerKind::Lsf,
        clock.clone(),
        Some(clock.clone()),
        MockCredentials::default(),
    )
    .await
    .unwrap();
    mock.core.set_timeline(Timeline {
        pending: Duration::from_secs(0),
        running: Duration::from_secs(1),
    });
    let adapter = new_adapter(AdapterKind::Lsf, &mock.base_url());
    let session = adapter.get_token(&mock_creds()).await.unwrap();

    let properties = BTreeMap::from([
        ("Queue".to_string(), "normal".to_string()),
        ("OutputFileName".to_string(), "run.log".to_string()),
    ]);
    let id = adapter
        .submit(
            &session,
            &ResolvedScript::Body("#!/bin/sh\n".to_string()),
            &properties,
            &BTreeMap::new(),
            "bridge-ns-lsf-files",
        )
        .await
        .unwrap();
    let job = mock.core.job(id.parse().unwrap()).unwrap();
    assert_eq!(job.payload["queue"], "normal");
    assert_eq!(job.payload["output_file"], "run.log");

    let info = adapter.get_job_info(&session, &id).await.unwrap();
    assert_eq!(info.remote_state, "RUN");

    clock.advance(Duration::from_secs(2));
    let info = adapter.get_job_info(&session, &id).await.unwrap();
    assert_eq!(info.remote_state, "DONE");
    assert!(info.end_time.is_some());

    let content = adapter.fetch_output(&session, &id, "run.log").await.unwrap();
    assert_eq!(
        String::from_utf8(content).unwrap(),
        mock.core.expected_output(id.parse().unwrap(), "run.log").unwrap()
    );
    let err = adapter.fetch_output(&session, &id, "absent.log").await.unwrap_err();
    assert!(matches!(err, AdapterError::FileMissing(_)));
}

#[tokio::test]
async fn slurm_outputs_route_via_shared_filesystem_emulation() {
    let clock = ManualClock::shared();
    let mock = spawn_slurm(clock.clone()).await;
    mock.core.set_timeline(Timeline {
        pending: Duration::from_secs(0),
        running: Duration::from_secs(0),
    });
    let adapter = new_adapter(AdapterKind::Slurm, &mock.base_url());
    let session = adapter.get_token(&mock_creds()).await.unwrap();
    let id = adapter
        .submit(
            &session,
            &ResolvedScript::Body(String::new()),
            &BTreeMap::from([("OutputFileName".to_string(), "out.txt".to_string())]),
            &BTreeMap::new(),
            "bridge-ns-sharedout",
        )
        .await
        .unwrap();
    clock.advance(Duration::from_secs(1));

    let content = adapter.fetch_output(&session, &id, "out.txt").await.unwrap();
    assert!(!content.is_empty());
    let err = adapter.fetch_output(&session, &id, "nope.txt").await.unwrap_err();
    assert!(matches!(err, AdapterError::FileMissing(_)));

    // Inputs land in the shared filesystem area.
    adapter
        .upload_input(&session, "wd/input.bin", &[7, 8, 9])
        .await
        .unwrap();
    assert_eq!(mock.core.shared("wd/input.bin"), Some(vec![7, 8, 9]));
}

#[tokio::test]
async fn kill_is_idempotent_on_terminal_jobs() {
    let clock = ManualClock::shared();
    let mock = spawn_slurm(clock.clone()).await;
    mock.core.set_timeline(Timeline {
        pending: Duration::from_secs(0),
        running: Duration::from_secs(0),
    });
    let adapter = new_adapter(AdapterKind::Slurm, &mock.base_url());
    let session = adapter.get_token(&mock_creds()).await.unwrap();
    let id = adapter
        .submit(
            &session,
            &ResolvedScript::Body(String::new()),
            &BTreeMap::new(),
            &BTreeMap::new(),
            "bridge-ns-killterm",
        )
        .await
        .unwrap();
    clock.advance(Duration::from_secs(1));
    let info = adapter.get_job_info(&session, &id).await.unwrap();
    assert_eq!(info.remote_state, "COMPLETED");

    adapter.kill(&session, &id).await.unwrap();
    let info = adapter.get_job_info(&session, &id).await.unwrap();
    assert_eq!(info.remote_state, "COMPLETED", "killing a finished job is a no-op");

    let err = adapter.get_job_info(&session, "4242").await.unwrap_err();
    assert!(matches!(err, AdapterError::NotFoundRemote(_)));
}

//! Reconciler behavior: record-before-worker ordering, crash restarts with
//! backoff, kill and delete propagation, spool ingestion, the single-worker
//! invariant under randomized crash schedules.

mod common;

use std::time::Duration;

use common::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use bridge_core::operator::{
    BackoffPolicy, Liveness, Operator, OperatorConfig, OperatorError, WorkerVehicle,
};
use bridge_core::worker::crash_points;
use bridge_core::{AdapterKind, BridgeState, JobKey};
use bridge_mocks::{MockManagerServer, Timeline};

struct OperatorRig {
    harness: Harness,
    operator: Operator,
    mock: MockManagerServer,
}

async fn rig_with(
    pending: u64,
    running: u64,
    configure: impl FnOnce(&mut OperatorConfig),
) -> OperatorRig {
    let harness = Harness::new();
    let mock = MockManagerServer::spawn_slurm_manual(harness.clock.clone())
        .await
        .unwrap();
    mock.core.set_timeline(Timeline {
        pending: Duration::from_secs(pending),
        running: Duration::from_secs(running),
    });
    let mut config = OperatorConfig::new(harness.dir.path().join("store"), harness.clock.clone());
    config.credentials_dir = harness.credentials_dir();
    config.s3_credentials_dir = harness.s3_credentials_dir();
    config.downloads_dir = harness.downloads_dir();
    config.vehicle = WorkerVehicle::Task;
    configure(&mut config);
    let operator = Operator::start(config).unwrap();
    OperatorRig {
        harness,
        operator,
        mock,
    }
}

fn doc(rig: &OperatorRig, name: &str) -> String {
    base_spec(name, &rig.mock.base_url(), AdapterKind::Slurm).to_document()
}

async fn drive_status(rig: &OperatorRig, key: &JobKey, want: BridgeState, steps: u32) -> bool {
    let operator = rig.operator.clone();
    let key = key.clone();
    let mut matched = false;
    for _ in 0..steps {
        if let Ok(snapshot) = operator.job_status(&key).await {
            if snapshot.state() == Some(want) {
                matched = true;
                break;
            }
        }
        rig.harness.clock.advance(Duration::from_secs(1));
        settle().await;
    }
    matched || operator.job_status(&key).await.is_ok_and(|s| s.state() == Some(want))
}

#[tokio::test(flavor = "multi_thread")]
async fn submit_creates_record_before_worker_and_completes() {
    let rig = rig_with(1, 1, |_| {}).await;
    let key = rig.operator.submit_document(&doc(&rig, "alpha")).await.unwrap();
    assert_eq!(key, JobKey::new("test", "alpha"));

    // Record exists at v1+ and exactly one live worker runs it.
    let snapshot = rig.operator.job_status(&key).await.unwrap();
    assert!(snapshot.version >= 1);
    let workers = rig.operator.live_workers().await.unwrap();
    assert_eq!(workers.len(), 1);
    assert_eq!(workers[0].key, key);
    assert_eq!(workers[0].liveness, Liveness::Running);
    assert_eq!(workers[0].launch_env["NAMESPACE"], "test");
    assert_eq!(workers[0].launch_env["JOBNAME"], "alpha");

    assert!(drive_status(&rig, &key, BridgeState::Done, 15).await);
    settle().await;
    // Finished worker leaves the registry.
    assert!(rig.operator.live_workers().await.unwrap().is_empty());
    rig.operator.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn duplicate_submission_is_rejected_with_one_worker() {
    let rig = rig_with(1, 1000, |_| {}).await;
    let key = rig.operator.submit_document(&doc(&rig, "dupe")).await.unwrap();
    let err = rig.operator.submit_document(&doc(&rig, "dupe")).await.unwrap_err();
    assert!(matches!(err, OperatorError::AlreadyExists(_)), "{err}");
    assert_eq!(rig.operator.live_workers().await.unwrap().len(), 1);
    rig.operator.delete(&key).await.unwrap();
    rig.operator.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn existing_record_blocks_worker_launch() {
    let rig = rig_with(0, 1, |_| {}).await;
    // A record already on disk (record-before-worker ordering): submission
    // fails and no worker is launched.
    let spec = base_spec("preexisting", &rig.mock.base_url(), AdapterKind::Slurm);
    rig.operator
        .store()
        .create_record(&spec.key(), spec.to_record_data("zz"))
        .unwrap();
    let err = rig
        .operator
        .submit_document(&spec.to_document())
        .await
        .unwrap_err();
    assert!(matches!(err, OperatorError::AlreadyExists(_)));
    assert!(rig.operator.live_workers().await.unwrap().is_empty());
    rig.operator.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn crashed_worker_restarts_and_adopts_the_job() {
    let rig = rig_with(0, 2, |config| {
        config.first_launch_env = vec![(
            "BRIDGE_CRASH_POINT".to_string(),
            crash_points::AFTER_ID_WRITE.to_string(),
        )];
        config.backoff = BackoffPolicy {
            base: Duration::from_secs(1),
            factor: 2,
            cap: Duration::from_secs(60),
        };
    })
    .await;
    let key = rig.operator.submit_document(&doc(&rig, "crashy")).await.unwrap();

    // First launch crashes right after the id write; the operator schedules a
    // restart after backoff and the replacement resumes monitoring.
    let mut saw_crashed = false;
    for _ in 0..30 {
        let workers = rig.operator.live_workers().await.unwrap();
        if workers.iter().any(|w| w.liveness == Liveness::Crashed) {
            saw_crashed = true;
        }
        if rig
            .operator
            .job_status(&key)
            .await
            .is_ok_and(|s| s.state() == Some(BridgeState::Done))
        {
            break;
        }
        rig.harness.clock.advance(Duration::from_secs(1));
        settle().await;
    }
    assert!(saw_crashed, "operator should have observed the crash");
    let snapshot = rig.operator.job_status(&key).await.unwrap();
    assert_eq!(snapshot.state(), Some(BridgeState::Done));
    // Exactly one effective remote job despite the crash.
    assert_eq!(rig.mock.core.jobs_named("bridge-test-crashy-"), 1);
    rig.operator.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn kill_propagates_and_terminal_kill_is_invalid() {
    let rig = rig_with(0, 1000, |_| {}).await;
    let key = rig.operator.submit_document(&doc(&rig, "victim")).await.unwrap();
    assert!(drive_status(&rig, &key, BridgeState::Running, 10).await);

    rig.operator.signal_kill(&key).await.unwrap();
    assert!(drive_status(&rig, &key, BridgeState::Killed, 10).await);

    let err = rig.operator.signal_kill(&key).await.unwrap_err();
    assert!(
        matches!(err, OperatorError::InvalidState { state: BridgeState::Killed, .. }),
        "{err}"
    );
    let err = rig
        .operator
        .signal_kill(&JobKey::new("test", "ghost"))
        .await
        .unwrap_err();
    assert!(matches!(err, OperatorError::NotFound(_)));
    rig.operator.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn kill_survives_worker_crash_before_acting() {
    // Crash the worker mid-monitor, set the kill flag while it is down, and
    // check the restarted worker still delivers the kill (flag persisted).
    let rig = rig_with(0, 1000, |config| {
        config.first_launch_env = vec![(
            "BRIDGE_CRASH_POINT".to_string(),
            crash_points::MID_MONITOR.to_string(),
        )];
        config.backoff = BackoffPolicy {
            base: Duration::from_secs(2),
            factor: 2,
            cap: Duration::from_secs(60),
        };
    })
    .await;
    let key = rig.operator.submit_document(&doc(&rig, "killcrash")).await.unwrap();

    // Wait until the worker crashed (it dies on its first RUNNING write).
    let mut crashed = false;
    for _ in 0..10 {
        rig.harness.clock.advance(Duration::from_secs(1));
        settle().await;
        let workers = rig.operator.live_workers().await.unwrap();
        if workers.iter().any(|w| w.liveness == Liveness::Crashed) {
            crashed = true;
            break;
        }
    }
    assert!(crashed, "worker never hit its crash point");

    // Kill while no worker is alive.
    rig.operator.signal_kill(&key).await.unwrap();
    assert!(drive_status(&rig, &key, BridgeState::Killed, 20).await);
    let record = rig.operator.store().get_record(&key).unwrap();
    let kills = rig.mock.kill_requests_for(record.get(bridge_core::store::keys::ID));
    assert_eq!(kills.len(), 1);
    rig.operator.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn delete_terminates_worker_and_quiesces_polls() {
    let rig = rig_with(0, 1000, |_| {}).await;
    let key = rig.operator.submit_document(&doc(&rig, "deleteme")).await.unwrap();
    assert!(drive_status(&rig, &key, BridgeState::Running, 10).await);
    let id = rig
        .operator
        .store()
        .get_record(&key)
        .unwrap()
        .get(bridge_core::store::keys::ID)
        .to_string();

    rig.operator.delete(&key).await.unwrap();
    settle().await;

    // No record, no worker.
    assert!(matches!(
        rig.operator.job_status(&key).await.unwrap_err(),
        OperatorError::NotFound(_)
    ));
    assert!(rig.operator.live_workers().await.unwrap().is_empty());

    // No further polls after quiescence.
    settle().await;
    let polls_before = rig.mock.status_requests_for(&id).len();
    for _ in 0..5 {
        rig.harness.clock.advance(Duration::from_secs(1));
        settle().await;
    }
    let polls_after = rig.mock.status_requests_for(&id).len();
    assert_eq!(polls_before, polls_after, "mock saw polls after deletion");

    // Idempotent.
    rig.operator.delete(&key).await.unwrap();
    rig.operator.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn spool_directory_creates_and_deletes_jobs() {
    let specs_dir = tempfile::tempdir().unwrap();
    let specs_path = specs_dir.path().to_path_buf();
    let rig = rig_with(0, 1, |config| {
        config.specs_dir = Some(specs_path.clone());
        config.spool_poll = Duration::from_millis(500);
    })
    .await;
    let key = JobKey::new("test", "spooled");
    let file = specs_path.join("spooled.yaml");
    std::fs::write(&file, doc(&rig, "spooled")).unwrap();

    let mut created = false;
    for _ in 0..10 {
        rig.harness.clock.advance(Duration::from_millis(500));
        settle().await;
        if rig.operator.job_status(&key).await.is_ok() {
            created = true;
            break;
        }
    }
    assert!(created, "spool file should create the job");
    assert!(drive_status(&rig, &key, BridgeState::Done, 10).await);

    std::fs::remove_file(&file).unwrap();
    let mut deleted = false;
    for _ in 0..10 {
        rig.harness.clock.advance(Duration::from_millis(500));
        settle().await;
        if matches!(
            rig.operator.job_status(&key).await,
            Err(OperatorError::NotFound(_))
        ) {
            deleted = true;
            break;
        }
    }
    assert!(deleted, "removing the spool file should delete the job");
    rig.operator.shutdown().await.unwrap();
}

/// Randomized crash schedule across several jobs: every job converges to
/// DONE with exactly one effective remote job, and no two live workers ever
/// share a key (the reconciler asserts that invariant internally; the loop
/// dying would hang this test).
#[tokio::test(flavor = "multi_thread")]
async fn randomized_crash_schedules_keep_single_worker_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB21D6E);
    let point = crash_points::ALL[rng.random_range(0..4)];
    let rig = rig_with(0, 2, |config| {
        config.first_launch_env = vec![("BRIDGE_CRASH_POINT".to_string(), point.to_string())];
        config.backoff = BackoffPolicy {
            base: Duration::from_secs(1),
            factor: 2,
            cap: Duration::from_secs(4),
        };
    })
    .await;

    let mut keys = Vec::new();
    for i in 0..5 {
        let name = format!("swarm-{i}");
        keys.push(rig.operator.submit_document(&doc(&rig, &name)).await.unwrap());
    }

    for _ in 0..40 {
        rig.harness.clock.advance(Duration::from_secs(1));
        settle().await;
        let workers = rig.operator.live_workers().await.unwrap();
        let mut seen = std::collections::HashSet::new();
        for worker in &workers {
            assert!(seen.insert(worker.key.clone()), "duplicate live worker for {}", worker.key);
        }
        let all_done = futures_all_done(&rig, &keys).await;
        if all_done {
            break;
        }
    }
    for key in &keys {
        let snapshot = rig.operator.job_status(key).await.unwrap();
        assert_eq!(snapshot.state(), Some(BridgeState::Done), "{key} stuck");
        assert_eq!(
            rig.mock.core.jobs_named(&format!("bridge-{}-{}-", key.namespace, key.name)),
            1,
            "effective-job count for {key}"
        );
    }
    rig.operator.shutdown().await.unwrap();
}

async fn futures_all_done(rig: &OperatorRig, keys: &[JobKey]) -> bool {
    for key in keys {
        match rig.operator.job_status(key).await {
            Ok(s) if s.state() == Some(BridgeState::Done) => {}
            _ => return false,
        }
    }
    true
}

/// A worker that can never reach the manager is restarted with exponential
/// backoff: attempts in a window stay bounded by T/base + 1.
#[tokio::test(flavor = "multi_thread")]
async fn restart_attempts_are_bounded_by_backoff() {
    let harness = Harness::new();
    let mut config = OperatorConfig::new(harness.dir.path().join("store"), harness.clock.clone());
    config.credentials_dir = harness.credentials_dir();
    config.s3_credentials_dir = harness.s3_credentials_dir();
    config.backoff = BackoffPolicy {
        base: Duration::from_secs(1),
        factor: 2,
        cap: Duration::from_secs(8),
    };
    let operator = Operator::start(config).unwrap();

    // Nothing listens here: every launch exits fatally at token time.
    let spec = base_spec("hopeless", "http://127.0.0.1:9", AdapterKind::Slurm);
    let key = operator.submit_document(&spec.to_document()).await.unwrap();

    let window_secs = 30u32;
    for _ in 0..window_secs {
        harness.clock.advance(Duration::from_secs(1));
        settle().await;
    }
    let workers = operator.live_workers().await.unwrap();
    assert_eq!(workers.len(), 1, "job still being retried");
    let attempts = workers[0].restart_count;
    assert!(attempts >= 2, "expected some restarts, saw {attempts}");
    assert!(
        attempts as u64 <= u64::from(window_secs) + 1,
        "restart attempts {attempts} exceed T/b + 1"
    );
    // Exponential spacing: far fewer than the linear bound.
    assert!(attempts <= 6, "backoff should slow restarts, saw {attempts}");

    operator.delete(&key).await.unwrap();
    operator.shutdown().await.unwrap();
}

//! Deterministic stand-ins for the external world: a Slurm-style HTTP
//! manager, an LSF-style HTTP manager, and an S3-compatible object store,
//! each with request-level fault injection and an injectable clock.
//!
//! Mocks run in-process for tests (spawn on an ephemeral port, assert through
//! the returned handles) and standalone through the `bridge-mock` binary.

mod control;
pub mod faults;
pub mod lsf;
pub mod manager;
pub mod objectstore;
pub mod slurm;

use std::net::SocketAddr;
use std::sync::Arc;

use bridge_core::{ManualClock, SharedClock, SystemClock};

pub use faults::{FaultGate, FaultPlan, RequestLogEntry};
pub use manager::{FinalState, JobView, ManagerCore, MockCredentials, MockJob, Phase, Timeline};
pub use objectstore::ObjectStoreCore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManagerKind {
    Slurm,
    Lsf,
}

/// A running mock workload manager plus direct handles for assertions.
pub struct MockManagerServer {
    pub addr: SocketAddr,
    pub core: Arc<ManagerCore>,
    pub gate: Arc<FaultGate>,
    task: tokio::task::JoinHandle<()>,
}

impl MockManagerServer {
    /// Bind an ephemeral port and serve. `manual` enables `/_mock/advance`
    /// and should be the same clock handed to workers under test.
    pub async fn spawn(
        kind: ManagerKind,
        clock: SharedClock,
        manual: Option<Arc<ManualClock>>,
        credentials: MockCredentials,
    ) -> std::io::Result<MockManagerServer> {
        let core = Arc::new(ManagerCore::new(clock.clone(), manual, credentials));
        let gate = Arc::new(FaultGate::new(clock));
        let router = match kind {
            ManagerKind::Slurm => slurm::slurm_router(core.clone(), gate.clone()),
            ManagerKind::Lsf => lsf::lsf_router(core.clone(), gate.clone()),
        };
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(faults::serve_with_faults(listener, router, gate.clone()));
        Ok(MockManagerServer {
            addr,
            core,
            gate,
            task,
        })
    }

    pub async fn spawn_slurm_manual(clock: Arc<ManualClock>) -> std::io::Result<MockManagerServer> {
        Self::spawn(
            ManagerKind::Slurm,
            clock.clone(),
            Some(clock),
            MockCredentials::default(),
        )
        .await
    }

    pub async fn spawn_slurm_wall() -> std::io::Result<MockManagerServer> {
        Self::spawn(
            ManagerKind::Slurm,
            SystemClock::shared(),
            None,
            MockCredentials::default(),
        )
        .await
    }

    pub async fn spawn_lsf_manual(clock: Arc<ManualClock>) -> std::io::Result<MockManagerServer> {
        Self::spawn(
            ManagerKind::Lsf,
            clock.clone(),
            Some(clock),
            MockCredentials::default(),
        )
        .await
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests logged for one job id's status endpoint, used by cadence and
    /// quiescence checks.
    pub fn status_requests_for(&self, id: &str) -> Vec<RequestLogEntry> {
        let path_slurm = format!("/slurm/v0.0.37/job/{id}");
        let path_lsf = format!("/platform/ws/jobs/{id}");
        self.gate
            .log()
            .into_iter()
            .filter(|e| e.method == "GET" && (e.path == path_slurm || e.path == path_lsf))
            .collect()
    }

    /// Kill requests logged for one job id.
    pub fn kill_requests_for(&self, id: &str) -> Vec<RequestLogEntry> {
        let path_slurm = format!("/slurm/v0.0.37/job/{id}");
        let path_lsf = format!("/platform/ws/jobs/{id}/kill");
        self.gate
            .log()
            .into_iter()
            .filter(|e| {
                (e.method == "DELETE" && e.path == path_slurm)
                    || (e.method == "POST" && e.path == path_lsf)
            })
            .collect()
    }
}

impl Drop for MockManagerServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// A running mock object store.
pub struct MockObjectStoreServer {
    pub addr: SocketAddr,
    pub core: Arc<ObjectStoreCore>,
    pub gate: Arc<FaultGate>,
    task: tokio::task::JoinHandle<()>,
}

impl MockObjectStoreServer {
    pub async fn spawn(access_key: &str) -> std::io::Result<MockObjectStoreServer> {
        let clock = SystemClock::shared();
        let core = Arc::new(ObjectStoreCore::new(access_key));
        let gate = Arc::new(FaultGate::new(clock));
        let router = objectstore::objectstore_router(core.clone(), gate.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(faults::serve_with_faults(listener, router, gate.clone()));
        Ok(MockObjectStoreServer {
            addr,
            core,
            gate,
            task,
        })
    }

    /// Bare `host:port` endpoint in the form BridgeJob documents carry.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }
}

impl Drop for MockObjectStoreServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

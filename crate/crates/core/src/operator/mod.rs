//! The reconciler: accepts BridgeJob documents (spool directory or admin
//! API), creates the job record, runs one worker per job, restarts crashed
//! workers with backoff, propagates kill and delete, and answers status
//! queries.
//!
//! All per-key actions serialize through one event loop fed by an mpsc
//! channel; spool scans and worker exits arrive as commands on the same
//! channel. Workers run concurrently with the loop and with each other.

mod admin;
mod spool;

pub use admin::serve_admin;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, oneshot};

use crate::clock::SharedClock;
use crate::spec::{parse_spec, SchemaError};
use crate::state::BridgeState;
use crate::store::{keys, JobKey, StateStore, StoreError};
use crate::worker::{self, CrashAction, CrashPoints, WorkerConfig};

#[derive(Debug, Clone)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: u32,
    pub cap: Duration,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base: Duration::from_secs(1),
            factor: 2,
            cap: Duration::from_secs(60),
        }
    }
}

impl BackoffPolicy {
    /// Delay before restart attempt `n` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let mut d = self.base;
        for _ in 1..attempt {
            d = d.saturating_mul(self.factor);
            if d >= self.cap {
                return self.cap;
            }
        }
        d.min(self.cap)
    }
}

/// How workers execute: in-process tasks by default, separate OS processes in
/// crash-test mode so tests can kill them.
#[derive(Debug, Clone)]
pub enum WorkerVehicle {
    Task,
    Process { program: PathBuf },
}

#[derive(Debug, Clone)]
pub struct OperatorConfig {
    pub store_root: PathBuf,
    /// Drop a BridgeJob file here to create the job, remove it to delete.
    pub specs_dir: Option<PathBuf>,
    pub credentials_dir: PathBuf,
    pub s3_credentials_dir: PathBuf,
    pub downloads_dir: PathBuf,
    pub clock: SharedClock,
    pub vehicle: WorkerVehicle,
    pub backoff: BackoffPolicy,
    pub spool_poll: Duration,
    /// Extra env vars applied only to a job's first launch (restart_count 0).
    /// Crash-sweep tests arm `BRIDGE_CRASH_POINT` here.
    pub first_launch_env: Vec<(String, String)>,
}

impl OperatorConfig {
    pub fn new(store_root: impl Into<PathBuf>, clock: SharedClock) -> Self {
        OperatorConfig {
            store_root: store_root.into(),
            specs_dir: None,
            credentials_dir: PathBuf::from("/credentials"),
            s3_credentials_dir: PathBuf::from("/s3credentials"),
            downloads_dir: PathBuf::from("downloads"),
            clock,
            vehicle: WorkerVehicle::Task,
            backoff: BackoffPolicy::default(),
            spool_poll: Duration::from_millis(500),
            first_launch_env: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("job {0} already exists")]
    AlreadyExists(JobKey),
    #[error("job {0} not found")]
    NotFound(JobKey),
    #[error("job {key} is already terminal ({state})")]
    InvalidState { key: JobKey, state: BridgeState },
    #[error("store failure: {0}")]
    Store(StoreError),
    #[error("worker launch failed: {0}")]
    Launch(String),
    #[error("operator is shut down")]
    Unavailable,
}

impl From<StoreError> for OperatorError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::AlreadyExists(key) => OperatorError::AlreadyExists(key),
            StoreError::NotFound(key) => OperatorError::NotFound(key),
            other => OperatorError::Store(other),
        }
    }
}

/// Point-in-time view of a job record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StatusSnapshot {
    pub namespace: String,
    pub name: String,
    #[serde(rename = "jobStatus")]
    pub job_status: String,
    #[serde(rename = "startTime")]
    pub start_time: String,
    #[serde(rename = "endTime")]
    pub end_time: String,
    pub message: String,
    pub version: u64,
}

impl StatusSnapshot {
    pub fn state(&self) -> Option<BridgeState> {
        self.job_status.parse().ok()
    }

    pub fn is_terminal(&self) -> bool {
        self.state().is_some_and(|s| s.is_terminal())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Liveness {
    Starting,
    Running,
    /// Crashed and waiting out the restart backoff.
    Crashed,
}

/// Introspection view of a live worker.
#[derive(Debug, Clone, serde::Serialize)]
pub struct WorkerHandle {
    pub key: JobKey,
    pub liveness: Liveness,
    pub restart_count: u32,
    pub launch_env: BTreeMap<String, String>,
}

#[derive(Debug)]
enum ExitOutcome {
    Code(i32),
    Crashed(String),
}

enum Command {
    Submit {
        document: String,
        reply: oneshot::Sender<Result<JobKey, OperatorError>>,
    },
    Status {
        key: JobKey,
        reply: oneshot::Sender<Result<StatusSnapshot, OperatorError>>,
    },
    Kill {
        key: JobKey,
        reply: oneshot::Sender<Result<(), OperatorError>>,
    },
    Delete {
        key: JobKey,
        reply: oneshot::Sender<Result<(), OperatorError>>,
    },
    ListWorkers {
        reply: oneshot::Sender<Vec<WorkerHandle>>,
    },
    WorkerExited {
        key: JobKey,
        generation: u64,
        exit: ExitOutcome,
    },
    RestartDue {
        key: JobKey,
        generation: u64,
    },
    Shutdown {
        reply: oneshot::Sender<()>,
    },
}

/// Cheap-to-clone handle onto a running operator.
#[derive(Clone)]
pub struct Operator {
    tx: mpsc::UnboundedSender<Command>,
    store: Arc<StateStore>,
}

impl Operator {
    /// Open the store and start the reconciler loop (plus the spool watcher
    /// when a specs directory is configured).
    pub fn start(config: OperatorConfig) -> Result<Operator, OperatorError> {
        let store = Arc::new(StateStore::open(&config.store_root).map_err(OperatorError::Store)?);
        let (tx, rx) = mpsc::unbounded_channel();
        let operator = Operator {
            tx: tx.clone(),
            store: store.clone(),
        };
        if let Some(dir) = config.specs_dir.clone() {
            tokio::spawn(spool::watch_spool(
                dir,
                config.spool_poll,
                config.clock.clone(),
                tx.clone(),
            ));
        }
        tokio::spawn(run_loop(config, store, tx, rx));
        Ok(operator)
    }

    pub fn store(&self) -> Arc<StateStore> {
        self.store.clone()
    }

    async fn send<T>(
        &self,
        make: impl FnOnce(oneshot::Sender<T>) -> Command,
    ) -> Result<T, OperatorError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| OperatorError::Unavailable)?;
        rx.await.map_err(|_| OperatorError::Unavailable)
    }

    /// Create the job described by a BridgeJob document and launch its worker.
    pub async fn submit_document(&self, document: &str) -> Result<JobKey, OperatorError> {
        self.send(|reply| Command::Submit {
            document: document.to_string(),
            reply,
        })
        .await?
    }

    pub async fn job_status(&self, key: &JobKey) -> Result<StatusSnapshot, OperatorError> {
        self.send(|reply| Command::Status {
            key: key.clone(),
            reply,
        })
        .await?
    }

    /// Set the kill flag; the worker delivers the kill on its next poll.
    pub async fn signal_kill(&self, key: &JobKey) -> Result<(), OperatorError> {
        self.send(|reply| Command::Kill {
            key: key.clone(),
            reply,
        })
        .await?
    }

    /// Terminate the worker (if live) and delete the record. Idempotent.
    pub async fn delete(&self, key: &JobKey) -> Result<(), OperatorError> {
        self.send(|reply| Command::Delete {
            key: key.clone(),
            reply,
        })
        .await?
    }

    pub async fn live_workers(&self) -> Result<Vec<WorkerHandle>, OperatorError> {
        self.send(|reply| Command::ListWorkers { reply }).await
    }

    pub async fn shutdown(&self) -> Result<(), OperatorError> {
        self.send(|reply| Command::Shutdown { reply }).await
    }
}

enum KillSwitch {
    Abort(tokio::task::AbortHandle),
    Signal(oneshot::Sender<()>),
}

struct WorkerEntry {
    generation: u64,
    restart_count: u32,
    liveness: Liveness,
    launch_env: BTreeMap<String, String>,
    kill_switch: Option<KillSwitch>,
}

struct Reconciler {
    config: OperatorConfig,
    store: Arc<StateStore>,
    tx: mpsc::UnboundedSender<Command>,
    registry: HashMap<JobKey, WorkerEntry>,
    next_generation: u64,
}

async fn run_loop(
    config: OperatorConfig,
    store: Arc<StateStore>,
    tx: mpsc::UnboundedSender<Command>,
    mut rx: mpsc::UnboundedReceiver<Command>,
) {
    let mut reconciler = Reconciler {
        config,
        store,
        tx,
        registry: HashMap::new(),
        next_generation: 1,
    };
    while let Some(command) = rx.recv().await {
        match command {
            Command::Submit { document, reply } => {
                let _ = reply.send(reconciler.reconcile_created(&document));
            }
            Command::Status { key, reply } => {
                let _ = reply.send(reconciler.job_status(&key));
            }
            Command::Kill { key, reply } => {
                let _ = reply.send(reconciler.signal_kill(&key));
            }
            Command::Delete { key, reply } => {
                let _ = reply.send(reconciler.reconcile_deleted(&key));
            }
            Command::ListWorkers { reply } => {
                let _ = reply.send(reconciler.worker_handles());
            }
            Command::WorkerExited {
                key,
                generation,
                exit,
            } => {
                reconciler.reconcile_worker_exit(&key, generation, exit);
            }
            Command::RestartDue { key, generation } => {
                reconciler.restart_due(&key, generation);
            }
            Command::Shutdown { reply } => {
                for (_, entry) in reconciler.registry.drain() {
                    fire(entry.kill_switch);
                }
                let _ = reply.send(());
                break;
            }
        }
    }
}

fn fire(kill_switch: Option<KillSwitch>) {
    match kill_switch {
        Some(KillSwitch::Abort(handle)) => handle.abort(),
        Some(KillSwitch::Signal(tx)) => {
            let _ = tx.send(());
        }
        None => {}
    }
}

impl Reconciler {
    /// Create the record, then launch the worker. Record-before-worker: if
    /// the record cannot be created no worker ever starts.
    fn reconcile_created(&mut self, document: &str) -> Result<JobKey, OperatorError> {
        let spec = parse_spec(document)?;
        let key = spec.key();
        if self.registry.contains_key(&key) {
            return Err(OperatorError::AlreadyExists(key));
        }
        let nonce = format!("{:06x}", rand::random::<u32>() & 0xff_ffff);
        self.store.create_record(&key, spec.to_record_data(&nonce))?;
        self.launch(&key, 0)?;
        Ok(key)
    }

    fn job_status(&self, key: &JobKey) -> Result<StatusSnapshot, OperatorError> {
        let record = self.store.get_record(key)?;
        Ok(StatusSnapshot {
            namespace: key.namespace.clone(),
            name: key.name.clone(),
            job_status: record.get(keys::JOB_STATUS).to_string(),
            start_time: record.get(keys::START_TIME).to_string(),
            end_time: record.get(keys::END_TIME).to_string(),
            message: record.get(keys::MESSAGE).to_string(),
            version: record.version,
        })
    }

    fn signal_kill(&self, key: &JobKey) -> Result<(), OperatorError> {
        let record = self.store.get_record(key)?;
        if let Some(state) = record.status() {
            if state.is_terminal() {
                return Err(OperatorError::InvalidState {
                    key: key.clone(),
                    state,
                });
            }
        }
        self.store.read_modify_write(key, 8, |current| {
            (!current.kill_requested()).then(|| {
                let mut d = BTreeMap::new();
                d.insert(keys::KILL.to_string(), "true".to_string());
                d
            })
        })?;
        Ok(())
    }

    /// Kill the worker if live and remove the record. Idempotent.
    fn reconcile_deleted(&mut self, key: &JobKey) -> Result<(), OperatorError> {
        if let Some(entry) = self.registry.remove(key) {
            fire(entry.kill_switch);
        }
        self.store.delete_record(key)?;
        Ok(())
    }

    /// Terminality is decided from the store, never from the exit code —
    /// codes are lost when a worker crashes hard.
    fn reconcile_worker_exit(&mut self, key: &JobKey, generation: u64, exit: ExitOutcome) {
        let Some(entry) = self.registry.get_mut(key) else {
            return; // deleted while exiting
        };
        if entry.generation != generation {
            return; // stale event from a replaced worker
        }
        let exit_desc = match &exit {
            ExitOutcome::Code(code) => format!("exit code {code}"),
            ExitOutcome::Crashed(why) => format!("crashed ({why})"),
        };
        match self.store.get_record(key) {
            Err(_) => {
                self.registry.remove(key);
            }
            Ok(record) => {
                let terminal = record.status().is_some_and(|s| s.is_terminal());
                if terminal {
                    tracing::info!(%key, exit = %exit_desc, "worker finished terminal job");
                    self.registry.remove(key);
                } else {
                    entry.liveness = Liveness::Crashed;
                    entry.restart_count += 1;
                    let attempt = entry.restart_count;
                    let delay = self.config.backoff.delay(attempt);
                    tracing::warn!(%key, exit = %exit_desc, attempt, ?delay, "worker exited mid-job, restarting after backoff");
                    let tx = self.tx.clone();
                    let clock = self.config.clock.clone();
                    let key = key.clone();
                    tokio::spawn(async move {
                        clock.sleep(delay).await;
                        let _ = tx.send(Command::RestartDue { key, generation });
                    });
                }
            }
        }
    }

    fn restart_due(&mut self, key: &JobKey, generation: u64) {
        let Some(entry) = self.registry.get(key) else {
            return;
        };
        if entry.generation != generation || entry.liveness != Liveness::Crashed {
            return;
        }
        let restart_count = entry.restart_count;
        match self.store.get_record(key) {
            Ok(record) if !record.status().is_some_and(|s| s.is_terminal()) => {
                self.registry.remove(key);
                if let Err(e) = self.launch(key, restart_count) {
                    tracing::error!(%key, error = %e, "relaunch failed");
                }
            }
            _ => {
                self.registry.remove(key);
            }
        }
    }

    fn worker_handles(&self) -> Vec<WorkerHandle> {
        let mut handles: Vec<WorkerHandle> = self
            .registry
            .iter()
            .map(|(key, e)| WorkerHandle {
                key: key.clone(),
                liveness: e.liveness,
                restart_count: e.restart_count,
                launch_env: e.launch_env.clone(),
            })
            .collect();
        handles.sort_by(|a, b| a.key.cmp(&b.key));
        handles
    }

    fn launch(&mut self, key: &JobKey, restart_count: u32) -> Result<(), OperatorError> {
        let generation = self.next_generation;
        self.next_generation += 1;

        let mut launch_env: BTreeMap<String, String> = BTreeMap::from([
            ("NAMESPACE".to_string(), key.namespace.clone()),
            ("JOBNAME".to_string(), key.name.clone()),
            (
                "BRIDGE_STORE_ROOT".to_string(),
                self.config.store_root.display().to_string(),
            ),
            (
                "BRIDGE_CREDENTIALS_DIR".to_string(),
                self.config.credentials_dir.display().to_string(),
            ),
            (
                "BRIDGE_S3_CREDENTIALS_DIR".to_string(),
                self.config.s3_credentials_dir.display().to_string(),
            ),
            (
                "BRIDGE_DOWNLOADS_DIR".to_string(),
                self.config.downloads_dir.display().to_string(),
            ),
        ]);
        if restart_count == 0 {
            for (k, v) in &self.config.first_launch_env {
                launch_env.insert(k.clone(), v.clone());
            }
        }

        let kill_switch = match &self.config.vehicle {
            WorkerVehicle::Task => self.launch_task(key, generation, &launch_env),
            WorkerVehicle::Process { program } => {
                self.launch_process(key, generation, &launch_env, program.clone())?
            }
        };

        let previous = self.registry.insert(
            key.clone(),
            WorkerEntry {
                generation,
                restart_count,
                liveness: Liveness::Running,
                launch_env,
                kill_switch: Some(kill_switch),
            },
        );
        // Single-worker invariant: at most one live worker per key, ever.
        assert!(
            previous.is_none(),
            "two live workers for {key}: generation {generation} replaced a live one"
        );
        Ok(())
    }

    fn launch_task(
        &self,
        key: &JobKey,
        generation: u64,
        launch_env: &BTreeMap<String, String>,
    ) -> KillSwitch {
        let mut cfg = WorkerConfig::new(key.clone(), &self.config.store_root, self.config.clock.clone());
        cfg.credentials_dir = self.config.credentials_dir.clone();
        cfg.s3_credentials_dir = self.config.s3_credentials_dir.clone();
        cfg.downloads_dir = self.config.downloads_dir.clone();
        if let Some(point) = launch_env.get("BRIDGE_CRASH_POINT") {
            cfg.crash = CrashPoints::at(point.clone(), CrashAction::Panic);
        }
        let store = self.store.clone();
        let task = tokio::spawn(async move { worker::run_with_store(cfg, &store).await });
        let abort = task.abort_handle();

        let tx = self.tx.clone();
        let key = key.clone();
        tokio::spawn(async move {
            let exit = match task.await {
                Ok(code) => ExitOutcome::Code(code),
                Err(e) if e.is_panic() => ExitOutcome::Crashed("panic".to_string()),
                Err(_) => ExitOutcome::Crashed("aborted".to_string()),
            };
            let _ = tx.send(Command::WorkerExited {
                key,
                generation,
                exit,
            });
        });
        KillSwitch::Abort(abort)
    }

    fn launch_process(
        &self,
        key: &JobKey,
        generation: u64,
        launch_env: &BTreeMap<String, String>,
        program: PathBuf,
    ) -> Result<KillSwitch, OperatorError> {
        let mut command = tokio::process::Command::new(&program);
        command
            .envs(launch_env.clone())
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::inherit())
            .kill_on_drop(true);
        let mut child = command
            .spawn()
            .map_err(|e| OperatorError::Launch(format!("{}: {e}", program.display())))?;

        let (kill_tx, mut kill_rx) = oneshot::channel::<()>();
        let tx = self.tx.clone();
        let key = key.clone();
        tokio::spawn(async move {
            let exit = tokio::select! {
                status = child.wait() => match status {
                    Ok(s) => ExitOutcome::Code(s.code().unwrap_or(-1)),
                    Err(e) => ExitOutcome::Crashed(e.to_string()),
                },
                _ = &mut kill_rx => {
                    let _ = child.kill().await;
                    let _ = child.wait().await;
                    ExitOutcome::Crashed("killed by operator".to_string())
                }
            };
            let _ = tx.send(Command::WorkerExited {
                key,
                generation,
                exit,
            });
        });
        Ok(KillSwitch::Signal(kill_tx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_to_cap() {
        let policy = BackoffPolicy {
            base: Duration::from_secs(1),
            factor: 2,
            cap: Duration::from_secs(60),
        };
        assert_eq!(policy.delay(1), Duration::from_secs(1));
        assert_eq!(policy.delay(2), Duration::from_secs(2));
        assert_eq!(policy.delay(3), Duration::from_secs(4));
        assert_eq!(policy.delay(7), Duration::from_secs(60));
        assert_eq!(policy.delay(30), Duration::from_secs(60));
    }

    /// Restart attempts in a window of length T stay at or under T/base + 1
    /// because consecutive attempts are always at least `base` apart.
    #[test]
    fn backoff_bounds_attempts_per_window() {
        let policy = BackoffPolicy {
            base: Duration::from_secs(1),
            factor: 2,
            cap: Duration::from_secs(8),
        };
        let mut times = Vec::new();
        let mut t = Duration::ZERO;
        for attempt in 1..=20 {
            t += policy.delay(attempt);
            times.push(t);
        }
        let window = Duration::from_secs(30);
        for &start in &times {
            let in_window = times
                .iter()
                .filter(|&&x| x >= start && x < start + window)
                .count() as u64;
            assert!(in_window <= window.as_secs() / policy.base.as_secs() + 1);
        }
    }
}

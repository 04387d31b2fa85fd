//! The per-job worker: submit the remote job if the record has no id yet,
//! then poll the manager, mirror status into the record, honor the kill flag,
//! stage outputs on completion and exit with a code reflecting the outcome.
//!
//! The record is the single source of truth across crashes. A restarted
//! worker that finds a remote id resumes monitoring without resubmitting; one
//! that crashed before the id write resubmits under the same recorded client
//! job name, which name-dedupe at the manager resolves to the original job.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::adapter::{self, AdapterError, ResourceAdapter, Session};
use crate::clock::SharedClock;
use crate::credentials;
use crate::s3::S3Client;
use crate::spec::{AdapterKind, ScriptLocation};
use crate::staging::{self, ResolvedScript};
use crate::state::{validate_transition, BridgeState};
use crate::store::{keys, JobKey, JobRecord, StateStore, StoreError};

/// Exit code meaning the remote job finished successfully.
pub const EXIT_DONE: i32 = 0;
/// Exit code for KILLED or FAILED outcomes.
pub const EXIT_FAILED: i32 = 1;
/// Fatal setup problem: unreadable record, bad credentials file, no store.
pub const EXIT_FATAL: i32 = 2;
/// Exit code used by injected crashes in tests.
pub const EXIT_CRASHED: i32 = 101;

pub const MSG_SUBMIT_FAILED: &str = "Failed to submit a job to HPC resource";
pub const MSG_AUTH_FAILED: &str = "Failed to authenticate with HPC resource";

/// Consecutive failed status fetches before the record flips to UNKNOWN.
pub const UNKNOWN_THRESHOLD: u32 = 3;

/// Named instrumentation points where a test can make the worker die.
pub mod crash_points {
    pub const BEFORE_SUBMIT: &str = "before-submit";
    pub const BETWEEN_SUBMIT_AND_ID_WRITE: &str = "between-submit-and-id-write";
    pub const AFTER_ID_WRITE: &str = "after-id-write";
    pub const MID_MONITOR: &str = "mid-monitor";
    pub const AFTER_TERMINAL_MAPPING: &str = "after-terminal-mapping";
    pub const BEFORE_OUTPUT_UPLOAD: &str = "before-output-upload";

    pub const ALL: [&str; 6] = [
        BEFORE_SUBMIT,
        BETWEEN_SUBMIT_AND_ID_WRITE,
        AFTER_ID_WRITE,
        MID_MONITOR,
        AFTER_TERMINAL_MAPPING,
        BEFORE_OUTPUT_UPLOAD,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashAction {
    /// Die the way a crashed pod does.
    ExitProcess,
    /// Panic instead, for in-process tests.
    Panic,
}

#[derive(Debug, Clone)]
pub struct CrashPoints {
    target: Option<String>,
    action: CrashAction,
}

impl CrashPoints {
    pub fn none() -> Self {
        CrashPoints {
            target: None,
            action: CrashAction::ExitProcess,
        }
    }

    pub fn at(point: impl Into<String>, action: CrashAction) -> Self {
        CrashPoints {
            target: Some(point.into()),
            action,
        }
    }

    fn hit(&self, point: &str) {
        if self.target.as_deref() == Some(point) {
            tracing::warn!(point, "injected crash");
            match self.action {
                CrashAction::ExitProcess => std::process::exit(EXIT_CRASHED),
                CrashAction::Panic => panic!("injected crash at {point}"),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub key: JobKey,
    pub store_root: PathBuf,
    pub credentials_dir: PathBuf,
    pub s3_credentials_dir: PathBuf,
    pub downloads_dir: PathBuf,
    pub clock: SharedClock,
    pub crash: CrashPoints,
}

impl WorkerConfig {
    pub fn new(key: JobKey, store_root: impl Into<PathBuf>, clock: SharedClock) -> Self {
        WorkerConfig {
            key,
            store_root: store_root.into(),
            credentials_dir: PathBuf::from("/credentials"),
            s3_credentials_dir: PathBuf::from("/s3credentials"),
            downloads_dir: PathBuf::from("downloads"),
            clock,
            crash: CrashPoints::none(),
        }
    }

    /// Build from the environment a launched worker process receives:
    /// `NAMESPACE`, `JOBNAME`, `BRIDGE_STORE_ROOT` and the optional override
    /// and crash-injection variables.
    pub fn from_env(clock: SharedClock) -> Result<Self, String> {
        let need = |name: &str| {
            std::env::var(name).map_err(|_| format!("missing required env var {name}"))
        };
        let namespace = need("NAMESPACE")?;
        let jobname = need("JOBNAME")?;
        let store_root = need("BRIDGE_STORE_ROOT")?;
        let mut cfg = WorkerConfig::new(JobKey::new(namespace, jobname), store_root, clock);
        if let Ok(dir) = std::env::var("BRIDGE_CREDENTIALS_DIR") {
            cfg.credentials_dir = dir.into();
        }
        if let Ok(dir) = std::env::var("BRIDGE_S3_CREDENTIALS_DIR") {
            cfg.s3_credentials_dir = dir.into();
        }
        if let Ok(dir) = std::env::var("BRIDGE_DOWNLOADS_DIR") {
            cfg.downloads_dir = dir.into();
        }
        if let Ok(point) = std::env::var("BRIDGE_CRASH_POINT") {
            if !point.is_empty() {
                cfg.crash = CrashPoints::at(point, CrashAction::ExitProcess);
            }
        }
        Ok(cfg)
    }
}

/// Run the worker to completion. Returns the process exit code.
pub async fn run(cfg: WorkerConfig) -> i32 {
    let store = match StateStore::open(&cfg.store_root) {
        Ok(s) => s,
        Err(e) => {
            tracing::error!(error = %e, "cannot open state store");
            return EXIT_FATAL;
        }
    };
    run_with_store(cfg, &store).await
}

/// Same as [`run`] but over a caller-provided store handle (in-process
/// workers share the operator's store so watchers see their writes).
pub async fn run_with_store(cfg: WorkerConfig, store: &StateStore) -> i32 {
    let key = cfg.key.clone();
    let record = match store.get_record(&key) {
        Ok(r) => r,
        Err(e) => {
            tracing::error!(%key, error = %e, "cannot read job record");
            return EXIT_FATAL;
        }
    };

    let adapter_kind: AdapterKind = match record.get(keys::ADAPTER).parse() {
        Ok(k) => k,
        Err(e) => {
            tracing::error!(%key, error = %e, "record has no usable adapter kind");
            return EXIT_FATAL;
        }
    };
    let adapter = adapter::new_adapter(adapter_kind, record.get(keys::RESOURCE_URL));
    let poll_secs: u64 = record
        .get(keys::UPDATE_INTERVAL)
        .parse()
        .unwrap_or(crate::spec::DEFAULT_UPDATE_INTERVAL)
        .max(1);

    let creds = match credentials::load_resource_credentials(
        &cfg.credentials_dir,
        record.get(keys::RESOURCE_SECRET),
    ) {
        Ok(c) => c,
        Err(e) => {
            tracing::error!(%key, error = %e, "cannot load resource credentials");
            return EXIT_FATAL;
        }
    };

    let storage = match build_storage(&cfg, &record) {
        Ok(s) => s,
        Err(code) => return code,
    };

    let session = match adapter.get_token(&creds).await {
        Ok(s) => s,
        Err(AdapterError::Auth) => {
            let _ = fail_terminal(store, &key, &cfg, MSG_AUTH_FAILED);
            return EXIT_FAILED;
        }
        Err(e) => {
            // Transient: exit without a terminal write so the operator's
            // backoff retries us.
            tracing::error!(%key, error = %e, "cannot reach resource manager for token");
            return EXIT_FATAL;
        }
    };

    cfg.crash.hit(crash_points::BEFORE_SUBMIT);

    let ctx = Ctx {
        cfg: &cfg,
        store,
        adapter: adapter.as_ref(),
        session: &session,
        storage: storage.as_ref(),
        poll_secs,
    };

    let record = match store.get_record(&key) {
        Ok(r) => r,
        Err(_) => return EXIT_FATAL,
    };
    let remote_id = if record.get(keys::ID).is_empty() {
        tracing::info!(%key, "job does not exist yet, submitting new job");
        match submit_new(&ctx, &record).await {
            Ok(id) => id,
            Err(code) => return code,
        }
    } else {
        let id = record.get(keys::ID).to_string();
        tracing::info!(%key, id, "job has an id in the record, handling state");
        id
    };

    let final_state = match monitor(&ctx, &remote_id).await {
        Ok(state) => state,
        Err(code) => return code,
    };

    cfg.crash.hit(crash_points::AFTER_TERMINAL_MAPPING);

    stage_outputs(&ctx, &remote_id).await;

    match final_state {
        BridgeState::Done => EXIT_DONE,
        _ => EXIT_FAILED,
    }
}

struct Ctx<'a> {
    cfg: &'a WorkerConfig,
    store: &'a StateStore,
    adapter: &'a dyn ResourceAdapter,
    session: &'a Session,
    storage: Option<&'a S3Client>,
    poll_secs: u64,
}

fn build_storage(cfg: &WorkerConfig, record: &JobRecord) -> Result<Option<S3Client>, i32> {
    let endpoint = record.get(keys::S3_ENDPOINT);
    if endpoint.is_empty() {
        return Ok(None);
    }
    let secret_name = record.get(keys::S3_SECRET);
    if secret_name.is_empty() {
        tracing::warn!("s3 endpoint configured without an s3secret; storage disabled");
        return Ok(None);
    }
    let creds = credentials::load_s3_credentials(&cfg.s3_credentials_dir, secret_name)
        .map_err(|e| {
            tracing::error!(error = %e, "cannot load s3 credentials");
            EXIT_FATAL
        })?;
    let secure = record.get(keys::S3_SECURE) == "true";
    Ok(Some(S3Client::new(endpoint, secure, &creds)))
}

async fn submit_new(ctx: &Ctx<'_>, record: &JobRecord) -> Result<String, i32> {
    let key = &ctx.cfg.key;
    // The deterministic client name must be in the record before anything is
    // sent to the manager; it is what a restarted worker resubmits under.
    let client_name = if record.get(keys::CLIENT_JOB_NAME).is_empty() {
        let name = format!("bridge-{}-{}-{:06x}", key.namespace, key.name, rand::random::<u32>() & 0xff_ffff);
        commit(ctx.store, key, |_| {
            Some(delta(&[(keys::CLIENT_JOB_NAME, &name)]))
        })
        .map_err(|_| EXIT_FATAL)?;
        name
    } else {
        record.get(keys::CLIENT_JOB_NAME).to_string()
    };

    let location: ScriptLocation = match record.get(keys::SCRIPT_LOCATION).parse() {
        Ok(l) => l,
        Err(e) => {
            fail_terminal(ctx.store, key, ctx.cfg, &format!("Failed to stage job script: {e}"));
            return Err(EXIT_FAILED);
        }
    };
    let script_md = record.get(keys::SCRIPT_MD);
    let script = match staging::resolve_script(
        location,
        record.get(keys::JOB_SCRIPT),
        (!script_md.is_empty()).then_some(script_md),
        ctx.storage,
    )
    .await
    {
        Ok(s) => s,
        Err(e) => {
            fail_terminal(ctx.store, key, ctx.cfg, &format!("Failed to stage job script: {e}"));
            return Err(EXIT_FAILED);
        }
    };

    let params: BTreeMap<String, String> = json_map(record.get(keys::JOB_PARAMS));
    let properties: BTreeMap<String, String> = json_map(record.get(keys::JOB_PROPERTIES));
    let script = match script {
        ResolvedScript::Body(body) => ResolvedScript::Body(staging::prepend_params(&body, &params)),
        remote => remote,
    };

    let additional: Vec<String> = json_list(record.get(keys::ADDITIONAL_DATA));
    let cwd = properties.get("currentWorkingDir").cloned().unwrap_or_default();
    if let Err(e) =
        staging::stage_inputs(&additional, ctx.storage, ctx.adapter, ctx.session, &cwd).await
    {
        fail_terminal(ctx.store, key, ctx.cfg, &format!("Failed to stage input data: {e}"));
        return Err(EXIT_FAILED);
    }

    match ctx
        .adapter
        .submit(ctx.session, &script, &properties, &params, &client_name)
        .await
    {
        Ok(remote_id) => {
            ctx.cfg.crash.hit(crash_points::BETWEEN_SUBMIT_AND_ID_WRITE);
            let result = commit(ctx.store, key, |current| {
                let mut d = delta(&[(keys::ID, &remote_id)]);
                if status_of(current) == Some(BridgeState::New) {
                    d.insert(keys::JOB_STATUS.into(), BridgeState::Submitted.as_str().into());
                }
                Some(d)
            });
            if result.is_err() {
                return Err(EXIT_FATAL);
            }
            ctx.cfg.crash.hit(crash_points::AFTER_ID_WRITE);
            Ok(remote_id)
        }
        Err(e) => {
            tracing::error!(%key, error = %e, "submit failed");
            fail_terminal(ctx.store, key, ctx.cfg, MSG_SUBMIT_FAILED);
            Err(EXIT_FAILED)
        }
    }
}

/// Poll the manager every `poll_secs`, mirroring status into the record,
/// until a terminal state is committed. Returns that state.
async fn monitor(ctx: &Ctx<'_>, remote_id: &str) -> Result<BridgeState, i32> {
    let key = &ctx.cfg.key;
    let mut consecutive_failures: u32 = 0;
    let mut kill_sent = false;
    let mut wrote_mid_monitor = false;

    loop {
        ctx.cfg
            .clock
            .sleep(std::time::Duration::from_secs(ctx.poll_secs))
            .await;

        let record = match ctx.store.get_record(key) {
            Ok(r) => r,
            Err(StoreError::NotFound(_)) => {
                tracing::info!(%key, "record deleted, stopping monitor");
                return Err(EXIT_FAILED);
            }
            Err(e) => {
                tracing::error!(%key, error = %e, "cannot read record in monitor loop");
                return Err(EXIT_FATAL);
            }
        };
        let current = record.status().unwrap_or(BridgeState::Unknown);
        if current.is_terminal() {
            // Another incarnation already finished the job.
            return Ok(current);
        }

        let info = match ctx.adapter.get_job_info(ctx.session, remote_id).await {
            Ok(info) => {
                consecutive_failures = 0;
                info
            }
            Err(e) => {
                consecutive_failures += 1;
                tracing::warn!(%key, error = %e, consecutive_failures, "status fetch failed");
                if consecutive_failures >= UNKNOWN_THRESHOLD
                    && current != BridgeState::Unknown
                    && validate_transition(current, BridgeState::Unknown)
                {
                    let _ = commit(ctx.store, key, |cur| {
                        let s = status_of(cur)?;
                        (!s.is_terminal() && s != BridgeState::Unknown).then(|| {
                            delta(&[(keys::JOB_STATUS, BridgeState::Unknown.as_str())])
                        })
                    });
                }
                continue;
            }
        };

        // Kill flag committed by the operator; one successful kill call per job.
        if record.kill_requested() && !kill_sent {
            let mapped_now = adapter::map_remote_state(ctx.adapter.kind(), &info.remote_state);
            if !mapped_now.is_terminal() {
                match ctx.adapter.kill(ctx.session, remote_id).await {
                    Ok(()) => {
                        tracing::info!(%key, remote_id, "kill delivered to resource manager");
                        kill_sent = true;
                    }
                    Err(e) => {
                        tracing::warn!(%key, error = %e, "kill failed, retrying next poll");
                    }
                }
            }
        }

        let mapped = adapter::map_remote_state(ctx.adapter.kind(), &info.remote_state);
        let desired = match mapped {
            // A kill that lands as a plain failure (LSF-style EXIT) is still
            // a kill from the user's point of view.
            BridgeState::Failed if kill_sent => BridgeState::Killed,
            other => other,
        };

        let now = ctx.cfg.clock.now();
        let committed = commit(ctx.store, key, |cur| {
            let cur_status = status_of(cur)?;
            if cur_status.is_terminal() {
                return None;
            }
            let mut d = BTreeMap::new();
            if desired != cur_status && validate_transition(cur_status, desired) {
                d.insert(keys::JOB_STATUS.into(), desired.as_str().to_string());
                if desired == BridgeState::Failed {
                    d.insert(
                        keys::MESSAGE.into(),
                        format!("Remote job ended in state {}", info.remote_state),
                    );
                }
            }
            if cur.get(keys::START_TIME).is_empty() {
                if let Some(t) = info.start_time {
                    d.insert(keys::START_TIME.into(), t.to_rfc3339());
                } else if desired == BridgeState::Running || desired.is_terminal() {
                    d.insert(keys::START_TIME.into(), now.to_rfc3339());
                }
            }
            if desired.is_terminal() && cur.get(keys::END_TIME).is_empty() {
                let t = info.end_time.unwrap_or(now);
                d.insert(keys::END_TIME.into(), t.to_rfc3339());
            }
            (!d.is_empty()).then_some(d)
        });

        let record_now = match committed {
            Ok(Some(r)) => r,
            Ok(None) => record,
            Err(e) => {
                tracing::warn!(%key, error = %e, "record update failed this cycle");
                continue;
            }
        };

        let status_now = record_now.status().unwrap_or(current);
        if !wrote_mid_monitor && !status_now.is_terminal() {
            wrote_mid_monitor = true;
            ctx.cfg.crash.hit(crash_points::MID_MONITOR);
        }
        if status_now.is_terminal() {
            return Ok(status_now);
        }
    }
}

/// Download configured output files from the resource and upload them to the
/// target bucket. Failures end up in the record message; the terminal job
/// state never changes here.
async fn stage_outputs(ctx: &Ctx<'_>, remote_id: &str) {
    let key = &ctx.cfg.key;
    let Ok(record) = ctx.store.get_record(key) else {
        return;
    };
    let bucket = record.get(keys::S3_UPLOAD_BUCKET).to_string();
    let files: Vec<String> = json_list(record.get(keys::S3_UPLOAD_FILES));
    if bucket.is_empty() || files.is_empty() {
        return;
    }

    let download_dir = ctx
        .cfg
        .downloads_dir
        .join(&key.namespace)
        .join(&key.name);
    let mut fetched: Vec<(String, Vec<u8>)> = Vec::new();
    let mut problems: Vec<String> = Vec::new();
    for path in &files {
        match ctx.adapter.fetch_output(ctx.session, remote_id, path).await {
            Ok(content) => {
                let local = download_dir.join(path.rsplit('/').next().unwrap_or(path));
                if let Some(parent) = local.parent() {
                    let _ = std::fs::create_dir_all(parent);
                }
                if let Err(e) = std::fs::write(&local, &content) {
                    tracing::warn!(%key, path, error = %e, "cannot write download");
                }
                fetched.push((path.clone(), content));
            }
            Err(e) => {
                tracing::warn!(%key, path, error = %e, "output fetch failed");
                problems.push(format!("{path}: {e}"));
            }
        }
    }

    ctx.cfg.crash.hit(crash_points::BEFORE_OUTPUT_UPLOAD);

    match ctx.storage {
        Some(storage) if !fetched.is_empty() => {
            match staging::upload_outputs(storage, &bucket, fetched).await {
                Ok(uploaded) => {
                    tracing::info!(%key, ?uploaded, bucket, "outputs uploaded");
                }
                Err(e) => problems.push(format!("upload to {bucket}: {e}")),
            }
        }
        None => problems.push("s3 upload configured but storage is not".to_string()),
        _ => {}
    }

    if !problems.is_empty() {
        let note = format!("output staging incomplete: {}", problems.join("; "));
        let _ = commit(ctx.store, key, |cur| {
            let mut merged = cur.get(keys::MESSAGE).to_string();
            if !merged.is_empty() {
                merged.push_str("; ");
            }
            merged.push_str(&note);
            Some(delta(&[(keys::MESSAGE, &merged)]))
        });
    }
}

fn fail_terminal(store: &StateStore, key: &JobKey, cfg: &WorkerConfig, message: &str) {
    let now = cfg.clock.now().to_rfc3339();
    let result = commit(store, key, |cur| {
        let s = status_of(cur)?;
        if s.is_terminal() || !validate_transition(s, BridgeState::Failed) {
            return None;
        }
        let mut d = delta(&[
            (keys::JOB_STATUS, BridgeState::Failed.as_str()),
            (keys::MESSAGE, message),
        ]);
        if cur.get(keys::END_TIME).is_empty() {
            d.insert(keys::END_TIME.into(), now.clone());
        }
        Some(d)
    });
    if let Err(e) = result {
        tracing::error!(%key, error = %e, "could not record failure");
    }
}

/// Read-modify-CAS with bounded retries. The builder returns `None` when
/// there is nothing to write given the current record.
fn commit<F>(store: &StateStore, key: &JobKey, build: F) -> Result<Option<JobRecord>, StoreError>
where
    F: Fn(&JobRecord) -> Option<BTreeMap<String, String>>,
{
    store.read_modify_write(key, 4, build)
}

fn status_of(record: &JobRecord) -> Option<BridgeState> {
    record.status()
}

fn delta(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn json_map(raw: &str) -> BTreeMap<String, String> {
    if raw.is_empty() {
        return BTreeMap::new();
    }
    serde_json::from_str(raw).unwrap_or_default()
}

fn json_list(raw: &str) -> Vec<String> {
    if raw.is_empty() {
        return Vec::new();
    }
    serde_json::from_str(raw).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crash_points_are_inert_by_default() {
        CrashPoints::none().hit(crash_points::BEFORE_SUBMIT);
    }

    #[test]
    #[should_panic(expected = "injected crash at mid-monitor")]
    fn crash_points_panic_when_armed() {
        CrashPoints::at(crash_points::MID_MONITOR, CrashAction::Panic).hit(crash_points::MID_MONITOR);
    }

    #[test]
    fn json_helpers_tolerate_empty() {
        assert!(json_map("").is_empty());
        assert!(json_list("").is_empty());
        assert_eq!(json_list(r#"["a","b"]"#), vec!["a", "b"]);
    }
}

//! Shared machinery behind both mock workload managers: jobs on configured
//! timelines, name-keyed submit dedupe, rendered outputs and a shared
//! filesystem emulation.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Serialize;
use serde_json::Value;

use bridge_core::{ManualClock, SharedClock};

/// Per-phase durations a job walks through.
#[derive(Debug, Clone, Copy)]
pub struct Timeline {
    pub pending: Duration,
    pub running: Duration,
}

impl Default for Timeline {
    fn default() -> Self {
        Timeline {
            pending: Duration::from_secs(1),
            running: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FinalState {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Pending,
    Running,
    Final,
    Cancelled,
}

pub const DEFAULT_OUTPUT_TEMPLATE: &str = "job {id} {state} {file}\n";

#[derive(Debug, Clone)]
pub struct MockJob {
    pub id: u64,
    pub name: String,
    pub script: String,
    pub payload: Value,
    pub submitted_at: DateTime<Utc>,
    pub timeline: Timeline,
    pub final_state: FinalState,
    pub cancelled_at: Option<DateTime<Utc>>,
    pub cwd: String,
    /// File names announced at submit time (stdout/stderr), rendered once the
    /// job is terminal.
    pub output_files: Vec<String>,
}

impl MockJob {
    fn pending_end(&self) -> DateTime<Utc> {
        self.submitted_at + chrono::Duration::from_std(self.timeline.pending).unwrap()
    }

    fn running_end(&self) -> DateTime<Utc> {
        self.pending_end() + chrono::Duration::from_std(self.timeline.running).unwrap()
    }

    pub fn phase(&self, now: DateTime<Utc>) -> Phase {
        if let Some(cancelled) = self.cancelled_at {
            if now >= cancelled {
                return Phase::Cancelled;
            }
        }
        if now < self.pending_end() {
            Phase::Pending
        } else if now < self.running_end() {
            Phase::Running
        } else {
            Phase::Final
        }
    }

    pub fn is_terminal(&self, now: DateTime<Utc>) -> bool {
        matches!(self.phase(now), Phase::Final | Phase::Cancelled)
    }

    pub fn start_time(&self, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
        let started_before_cancel = self
            .cancelled_at
            .map_or(true, |cancelled| cancelled > self.pending_end());
        (started_before_cancel && now >= self.pending_end()).then(|| self.pending_end())
    }

    pub fn end_time(&self, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
        if let Some(cancelled) = self.cancelled_at {
            if now >= cancelled {
                return Some(cancelled);
            }
        }
        (now >= self.running_end()).then(|| self.running_end())
    }
}

/// Snapshot handed to tests and the `/_mock/jobs` endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub id: u64,
    pub name: String,
    pub phase: Phase,
    pub final_state: FinalState,
    pub cancelled: bool,
}

#[derive(Debug, Clone)]
pub struct MockCredentials {
    pub username: String,
    pub token: String,
}

impl Default for MockCredentials {
    fn default() -> Self {
        MockCredentials {
            username: "bridgeuser".into(),
            token: "bridge-token".into(),
        }
    }
}

#[derive(Debug)]
pub struct ManagerCore {
    pub clock: SharedClock,
    /// Present when the clock is manual so `/_mock/advance` can step it.
    pub manual: Option<Arc<ManualClock>>,
    pub credentials: MockCredentials,
    state: Mutex<ManagerState>,
}

#[derive(Debug)]
struct ManagerState {
    next_id: u64,
    next_session: u64,
    jobs: BTreeMap<u64, MockJob>,
    sessions: Vec<String>,
    shared_fs: BTreeMap<String, Vec<u8>>,
    default_timeline: Timeline,
    default_final_state: FinalState,
    output_template: String,
}

pub struct SubmitOutcome {
    pub id: u64,
    pub deduped: bool,
}

impl ManagerCore {
    pub fn new(clock: SharedClock, manual: Option<Arc<ManualClock>>, credentials: MockCredentials) -> Self {
        ManagerCore {
            clock,
            manual,
            credentials,
            state: Mutex::new(ManagerState {
                next_id: 1,
                next_session: 1,
                jobs: BTreeMap::new(),
                sessions: Vec::new(),
                shared_fs: BTreeMap::new(),
                default_timeline: Timeline::default(),
                default_final_state: FinalState::Completed,
                output_template: DEFAULT_OUTPUT_TEMPLATE.to_string(),
            }),
        }
    }

    pub fn set_timeline(&self, timeline: Timeline) {
        self.state.lock().unwrap().default_timeline = timeline;
    }

    pub fn set_final_state(&self, final_state: FinalState) {
        self.state.lock().unwrap().default_final_state = final_state;
    }

    pub fn set_output_template(&self, template: impl Into<String>) {
        self.state.lock().unwrap().output_template = template.into();
    }

    pub fn check_basic_auth(&self, username: &str, token: &str) -> bool {
        username == self.credentials.username && token == self.credentials.token
    }

    pub fn open_session(&self, username: &str, password: &str) -> Option<String> {
        if !self.check_basic_auth(username, password) {
            return None;
        }
        let mut state = self.state.lock().unwrap();
        let session = format!("sess-{}", state.next_session);
        state.next_session += 1;
        state.sessions.push(session.clone());
        Some(session)
    }

    pub fn session_valid(&self, session: &str) -> bool {
        self.state.lock().unwrap().sessions.iter().any(|s| s == session)
    }

    /// Register a job. A live or terminal job already carrying `name` wins:
    /// its id is returned and nothing new is created (the dedupe contract
    /// that makes crash-and-resubmit exactly-once).
    pub fn submit(
        &self,
        name: &str,
        script: String,
        payload: Value,
        cwd: String,
        output_files: Vec<String>,
    ) -> SubmitOutcome {
        let mut state = self.state.lock().unwrap();
        if let Some(existing) = state.jobs.values().find(|j| j.name == name) {
            return SubmitOutcome {
                id: existing.id,
                deduped: true,
            };
        }
        let id = state.next_id;
        state.next_id += 1;
        let job = MockJob {
            id,
            name: name.to_string(),
            script,
            payload,
            submitted_at: self.clock.now(),
            timeline: state.default_timeline,
            final_state: state.default_final_state,
            cancelled_at: None,
            cwd,
            output_files,
        };
        state.jobs.insert(id, job);
        SubmitOutcome { id, deduped: false }
    }

    pub fn job(&self, id: u64) -> Option<MockJob> {
        self.state.lock().unwrap().jobs.get(&id).cloned()
    }

    /// Cancel a job unless it is already terminal. Idempotent either way.
    pub fn kill(&self, id: u64) -> bool {
        let now = self.clock.now();
        let mut state = self.state.lock().unwrap();
        let Some(job) = state.jobs.get_mut(&id) else {
            return false;
        };
        if !job.is_terminal(now) {
            job.cancelled_at = Some(now);
        }
        true
    }

    /// Rendered content of a job output file once the job is terminal.
    /// `Err(true)` means "exists but not terminal yet".
    pub fn output(&self, id: u64, path: &str) -> Result<Vec<u8>, bool> {
        let now = self.clock.now();
        let state = self.state.lock().unwrap();
        let Some(job) = state.jobs.get(&id) else {
            return Err(false);
        };
        if !job.is_terminal(now) {
            return Err(true);
        }
        if !job.output_files.iter().any(|f| f == path) {
            return Err(false);
        }
        Ok(render_output(&state.output_template, job, now, path).into_bytes())
    }

    /// What `output` will render for a terminal job; lets tests compute the
    /// expected content without fetching it.
    pub fn expected_output(&self, id: u64, path: &str) -> Option<String> {
        let now = self.clock.now();
        let state = self.state.lock().unwrap();
        let job = state.jobs.get(&id)?;
        job.output_files
            .iter()
            .any(|f| f == path)
            .then(|| render_output(&state.output_template, job, now, path))
    }

    pub fn put_shared(&self, path: &str, content: Vec<u8>) {
        self.state.lock().unwrap().shared_fs.insert(path.to_string(), content);
    }

    pub fn shared(&self, path: &str) -> Option<Vec<u8>> {
        self.state.lock().unwrap().shared_fs.get(path).cloned()
    }

    pub fn shared_paths(&self) -> Vec<String> {
        self.state.lock().unwrap().shared_fs.keys().cloned().collect()
    }

    pub fn jobs_view(&self) -> Vec<JobView> {
        let now = self.clock.now();
        self.state
            .lock()
            .unwrap()
            .jobs
            .values()
            .map(|j| JobView {
                id: j.id,
                name: j.name.clone(),
                phase: j.phase(now),
                final_state: j.final_state,
                cancelled: j.cancelled_at.is_some(),
            })
            .collect()
    }

    /// Distinct jobs registered under names starting with `prefix`: the
    /// effective-job count crash-sweep tests assert on.
    pub fn jobs_named(&self, prefix: &str) -> usize {
        self.state
            .lock()
            .unwrap()
            .jobs
            .values()
            .filter(|j| j.name.starts_with(prefix))
            .count()
    }

    /// Step the manual clock (the `/_mock/advance` control). False when the
    /// mock runs on a wall clock.
    pub fn advance(&self, by: Duration) -> bool {
        match &self.manual {
            Some(clock) => {
                clock.advance(by);
                true
            }
            None => false,
        }
    }
}

fn render_output(template: &str, job: &MockJob, now: DateTime<Utc>, file: &str) -> String {
    let state = match job.phase(now) {
        Phase::Cancelled => "CANCELLED",
        Phase::Final => match job.final_state {
            FinalState::Completed => "COMPLETED",
            FinalState::Failed => "FAILED",
        },
        Phase::Pending => "PENDING",
        Phase::Running => "RUNNING",
    };
    template
        .replace("{id}", &job.id.to_string())
        .replace("{name}", &job.name)
        .replace("{state}", state)
        .replace("{file}", file)
}

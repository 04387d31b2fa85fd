//! The resource-manager adapter contract and its Slurm-style and LSF-style
//! implementations.
//!
//! An adapter is the only thing that talks to an external workload manager.
//! The contract assumes nothing beyond an HTTP/HTTPS API: authenticate,
//! submit, query, kill, move files. Adapters never touch the record store;
//! the worker owns all state transitions.

mod lsf;
mod slurm;
mod translation;

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};

use crate::credentials::{CredentialSet, SecretString};
use crate::spec::AdapterKind;
use crate::staging::ResolvedScript;
use crate::state::BridgeState;

pub use lsf::LsfAdapter;
pub use slurm::SlurmAdapter;
pub use translation::PropertyTable;

/// Timeout for every HTTP exchange with a resource manager.
pub const HTTP_TIMEOUT: Duration = Duration::from_secs(5);

/// Authenticated session: username plus the secret the manager expects on
/// subsequent calls (a token for Slurm-style, a session cookie for LSF-style).
#[derive(Debug, Clone)]
pub struct Session {
    pub username: String,
    pub secret: SecretString,
}

/// Normalized snapshot of a remote job.
#[derive(Debug, Clone)]
pub struct RemoteJobInfo {
    pub remote_id: String,
    /// State string in the manager's own vocabulary.
    pub remote_state: String,
    pub start_time: Option<DateTime<Utc>>,
    pub end_time: Option<DateTime<Utc>>,
    /// The manager's response payload, untouched.
    pub raw: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("resource manager rejected the credentials")]
    Auth,
    #[error("resource manager unreachable: {0}")]
    Unreachable(String),
    #[error("submission rejected by resource manager: {0}")]
    SubmitRejected(String),
    #[error("remote job {0} not found on resource manager")]
    NotFoundRemote(String),
    #[error("remote file {0} missing")]
    FileMissing(String),
    #[error("operation not supported by this resource manager")]
    Unsupported,
    #[error("invalid job properties: {0}")]
    InvalidProperties(String),
}

#[async_trait]
pub trait ResourceAdapter: Send + Sync {
    fn kind(&self) -> AdapterKind;

    /// Verify credentials against the manager and return the session used on
    /// every subsequent call.
    async fn get_token(&self, credentials: &CredentialSet) -> Result<Session, AdapterError>;

    /// Register a job under `client_name` and return its remote id. Managers
    /// honoring the name-dedupe contract return the existing job's id when a
    /// live or terminal job already carries that name, which is what makes
    /// crash-and-resubmit exactly-once.
    async fn submit(
        &self,
        session: &Session,
        script: &ResolvedScript,
        properties: &BTreeMap<String, String>,
        params: &BTreeMap<String, String>,
        client_name: &str,
    ) -> Result<String, AdapterError>;

    async fn get_job_info(
        &self,
        session: &Session,
        remote_id: &str,
    ) -> Result<RemoteJobInfo, AdapterError>;

    /// Idempotent on already-terminal jobs.
    async fn kill(&self, session: &Session, remote_id: &str) -> Result<(), AdapterError>;

    /// Deliver an input file to the resource before submission.
    async fn upload_input(
        &self,
        session: &Session,
        remote_path: &str,
        content: &[u8],
    ) -> Result<(), AdapterError>;

    /// Fetch an output file of a terminal job.
    async fn fetch_output(
        &self,
        session: &Session,
        remote_id: &str,
        remote_path: &str,
    ) -> Result<Vec<u8>, AdapterError>;
}

/// Build the adapter for a manager kind at `resource_url`.
pub fn new_adapter(kind: AdapterKind, resource_url: &str) -> Box<dyn ResourceAdapter> {
    let base = resource_url.trim_end_matches('/').to_string();
    match kind {
        AdapterKind::Slurm => Box::new(SlurmAdapter::new(base)),
        AdapterKind::Lsf => Box::new(LsfAdapter::new(base)),
    }
}

/// Map a manager state string to the bridge lifecycle. Total: anything
/// unrecognized is `UNKNOWN`.
pub fn map_remote_state(kind: AdapterKind, remote_state: &str) -> BridgeState {
    match kind {
        AdapterKind::Slurm => match remote_state {
            "PENDING" => BridgeState::Submitted,
            "RUNNING" | "COMPLETING" => BridgeState::Running,
            "COMPLETED" => BridgeState::Done,
            "CANCELLED" => BridgeState::Killed,
            "FAILED" | "TIMEOUT" | "NODE_FAIL" | "OUT_OF_MEMORY" => BridgeState::Failed,
            _ => BridgeState::Unknown,
        },
        AdapterKind::Lsf => match remote_state {
            "PEND" => BridgeState::Submitted,
            "RUN" => BridgeState::Running,
            "DONE" => BridgeState::Done,
            "EXIT" => BridgeState::Failed,
            "USUSP" | "PSUSP" => BridgeState::Running,
            _ => BridgeState::Unknown,
        },
    }
}

pub(crate) fn http_client() -> reqwest::Client {
    // One fresh connection per exchange. Pooled idle connections get an
    // automatic retry from the HTTP stack when the server kills them
    // mid-request, which would hide injected connection faults from the
    // monitor loop's failure counting.
    reqwest::Client::builder()
        .timeout(HTTP_TIMEOUT)
        .pool_max_idle_per_host(0)
        .build()
        .expect("client builds")
}

/// Every send() failure is a transport problem from the adapter's point of
/// view: connection refused/reset, timeout, or a torn response.
pub(crate) fn transport_error(e: reqwest::Error) -> AdapterError {
    AdapterError::Unreachable(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn slurm_state_table() {
        use BridgeState::*;
        let cases = [
            ("PENDING", Submitted),
            ("RUNNING", Running),
            ("COMPLETING", Running),
            ("COMPLETED", Done),
            ("CANCELLED", Killed),
            ("FAILED", Failed),
            ("TIMEOUT", Failed),
            ("NODE_FAIL", Failed),
            ("OUT_OF_MEMORY", Failed),
            ("GIBBERISH", Unknown),
            ("", Unknown),
        ];
        for (remote, expected) in cases {
            assert_eq!(map_remote_state(AdapterKind::Slurm, remote), expected, "{remote}");
        }
    }

    #[test]
    fn lsf_state_table() {
        use BridgeState::*;
        let cases = [
            ("PEND", Submitted),
            ("RUN", Running),
            ("DONE", Done),
            ("EXIT", Failed),
            ("USUSP", Running),
            ("PSUSP", Running),
            ("ZOMBI", Unknown),
        ];
        for (remote, expected) in cases {
            assert_eq!(map_remote_state(AdapterKind::Lsf, remote), expected, "{remote}");
        }
    }

    proptest! {
        #[test]
        fn map_remote_state_is_total(s in ".*", slurm in proptest::bool::ANY) {
            let kind = if slurm { AdapterKind::Slurm } else { AdapterKind::Lsf };
            let state = map_remote_state(kind, &s);
            prop_assert!(BridgeState::ALL.contains(&state));
        }
    }
}

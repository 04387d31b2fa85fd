//! Slurm-style REST adapter (slurmrestd v0.0.37 subset).
//!
//! Wire subset: `POST /slurm/v0.0.37/job/submit`, `GET /slurm/v0.0.37/job/{id}`,
//! `DELETE /slurm/v0.0.37/job/{id}` with `X-SLURM-USER-NAME` /
//! `X-SLURM-USER-TOKEN` auth headers. The API has no file transfer, so input
//! and output files ride the cluster's shared-filesystem emulation exposed by
//! the bundled mock (`/_shared/...`).

use std::collections::BTreeMap;

use async_trait::async_trait;
use chrono::DateTime;
use serde_json::{json, Value};

use super::{
    http_client, transport_error, AdapterError, PropertyTable, RemoteJobInfo, ResourceAdapter,
    Session,
};
use crate::credentials::{CredentialSet, SecretString};
use crate::spec::AdapterKind;
use crate::staging::ResolvedScript;

const API: &str = "/slurm/v0.0.37";

pub struct SlurmAdapter {
    base: String,
    http: reqwest::Client,
}

impl SlurmAdapter {
    pub fn new(base: impl Into<String>) -> Self {
        SlurmAdapter {
            base: base.into(),
            http: http_client(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{API}{path}", self.base)
    }

    fn authed(&self, req: reqwest::RequestBuilder, session: &Session) -> reqwest::RequestBuilder {
        req.header("X-SLURM-USER-NAME", &session.username)
            .header("X-SLURM-USER-TOKEN", session.secret.expose())
    }
}

#[async_trait]
impl ResourceAdapter for SlurmAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::Slurm
    }

    async fn get_token(&self, credentials: &CredentialSet) -> Result<Session, AdapterError> {
        let session = Session {
            username: credentials.username.clone(),
            secret: SecretString::new(credentials.token.expose()),
        };
        // slurmrestd has no logon endpoint; verify the credentials with a
        // cheap authenticated query (job 0 never exists, 404 means the auth
        // headers were accepted).
        let resp = self
            .authed(self.http.get(self.url("/job/0")), &session)
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            401 | 403 => Err(AdapterError::Auth),
            _ => Ok(session),
        }
    }

    async fn submit(
        &self,
        session: &Session,
        script: &ResolvedScript,
        properties: &BTreeMap<String, String>,
        params: &BTreeMap<String, String>,
        client_name: &str,
    ) -> Result<String, AdapterError> {
        let mut job = PropertyTable::for_kind(AdapterKind::Slurm).translate(properties)?;
        if !client_name.is_empty() {
            // The deterministic client name is the dedupe key; it wins over
            // any translated job-name property.
            job.insert("name".into(), Value::String(client_name.into()));
        }
        let script_payload = match script {
            ResolvedScript::Body(body) => body.clone(),
            ResolvedScript::RemotePath(path) => {
                // Parameters for remote scripts travel in the payload; staged
                // script bodies already carry them prepended.
                if !params.is_empty() {
                    job.insert("environment".into(), json!(params));
                }
                path.clone()
            }
        };
        let body = json!({ "job": Value::Object(job), "script": script_payload });
        let resp = self
            .authed(self.http.post(self.url("/job/submit")), session)
            .json(&body)
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            200 => {
                let parsed: Value = resp.json().await.map_err(transport_error)?;
                let id = parsed
                    .get("job_id")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| AdapterError::SubmitRejected("no job_id in response".into()))?;
                Ok(id.to_string())
            }
            401 | 403 => Err(AdapterError::Auth),
            status => Err(AdapterError::SubmitRejected(format!(
                "status {status}: {}",
                resp.text().await.unwrap_or_default()
            ))),
        }
    }

    async fn get_job_info(
        &self,
        session: &Session,
        remote_id: &str,
    ) -> Result<RemoteJobInfo, AdapterError> {
        let resp = self
            .authed(self.http.get(self.url(&format!("/job/{remote_id}"))), session)
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            200 => {
                let parsed: Value = resp.json().await.map_err(transport_error)?;
                let job = parsed
                    .get("jobs")
                    .and_then(Value::as_array)
                    .and_then(|jobs| jobs.first())
                    .ok_or_else(|| AdapterError::NotFoundRemote(remote_id.to_string()))?;
                let state = job
                    .get("job_state")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string();
                if state.is_empty() {
                    return Err(AdapterError::Unreachable("job info without job_state".into()));
                }
                Ok(RemoteJobInfo {
                    remote_id: remote_id.to_string(),
                    remote_state: state,
                    start_time: unix_field(job, "start_time"),
                    end_time: unix_field(job, "end_time"),
                    raw: job.clone(),
                })
            }
            404 => Err(AdapterError::NotFoundRemote(remote_id.to_string())),
            401 | 403 => Err(AdapterError::Auth),
            status => Err(AdapterError::Unreachable(format!("status {status}"))),
        }
    }

    async fn kill(&self, session: &Session, remote_id: &str) -> Result<(), AdapterError> {
        let resp = self
            .authed(self.http.delete(self.url(&format!("/job/{remote_id}"))), session)
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            // 404 = the manager already forgot it; killing is idempotent.
            200 | 404 => Ok(()),
            401 | 403 => Err(AdapterError::Auth),
            status => Err(AdapterError::Unreachable(format!("status {status}"))),
        }
    }

    async fn upload_input(
        &self,
        session: &Session,
        remote_path: &str,
        content: &[u8],
    ) -> Result<(), AdapterError> {
        let resp = self
            .authed(
                self.http
                    .put(format!("{}/_shared/fs/{remote_path}", self.base))
                    .body(content.to_vec()),
                session,
            )
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            200 => Ok(()),
            401 | 403 => Err(AdapterError::Auth),
            status => Err(AdapterError::Unreachable(format!("status {status}"))),
        }
    }

    async fn fetch_output(
        &self,
        session: &Session,
        remote_id: &str,
        remote_path: &str,
    ) -> Result<Vec<u8>, AdapterError> {
        let resp = self
            .authed(
                self.http
                    .get(format!("{}/_shared/jobs/{remote_id}/{remote_path}", self.base)),
                session,
            )
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            200 => Ok(resp.bytes().await.map_err(transport_error)?.to_vec()),
            404 | 409 => Err(AdapterError::FileMissing(remote_path.to_string())),
            401 | 403 => Err(AdapterError::Auth),
            status => Err(AdapterError::Unreachable(format!("status {status}"))),
        }
    }
}

fn unix_field(job: &Value, field: &str) -> Option<chrono::DateTime<chrono::Utc>> {
    let secs = job.get(field).and_then(Value::as_i64)?;
    if secs <= 0 {
        return None;
    }
    DateTime::from_timestamp(secs, 0)
}

//! LSF-style Application Center adapter.
//!
//! Wire subset: cookie-session auth via `POST /platform/ws/logon`, then
//! `POST /platform/ws/jobs/submit`, `GET /platform/ws/jobs/{id}`,
//! `POST /platform/ws/jobs/{id}/kill` and file download
//! `GET /platform/ws/jobfiles/{id}/{path}`.

use std::collections::BTreeMap;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde_json::{json, Value};

use super::{
    http_client, transport_error, AdapterError, PropertyTable, RemoteJobInfo, ResourceAdapter,
    Session,
};
use crate::credentials::{CredentialSet, SecretString};
use crate::spec::AdapterKind;
use crate::staging::ResolvedScript;

const API: &str = "/platform/ws";
const SESSION_COOKIE: &str = "platform_token";

pub struct LsfAdapter {
    base: String,
    http: reqwest::Client,
}

impl LsfAdapter {
    pub fn new(base: impl Into<String>) -> Self {
        LsfAdapter {
            base: base.into(),
            http: http_client(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{API}{path}", self.base)
    }

    fn authed(&self, req: reqwest::RequestBuilder, session: &Session) -> reqwest::RequestBuilder {
        req.header(
            "Cookie",
            format!("{SESSION_COOKIE}={}", session.secret.expose()),
        )
    }
}

#[async_trait]
impl ResourceAdapter for LsfAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::Lsf
    }

    async fn get_token(&self, credentials: &CredentialSet) -> Result<Session, AdapterError> {
        let resp = self
            .http
            .post(self.url("/logon"))
            .json(&json!({
                "username": credentials.username,
                "password": credentials.token.expose(),
            }))
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            200 => {
                let cookie = resp
                    .headers()
                    .get("set-cookie")
                    .and_then(|v| v.to_str().ok())
                    .and_then(parse_session_cookie)
                    .ok_or_else(|| {
                        AdapterError::Unreachable("logon response without session cookie".into())
                    })?;
                Ok(Session {
                    username: credentials.username.clone(),
                    secret: SecretString::new(cookie),
                })
            }
            401 | 403 => Err(AdapterError::Auth),
            status => Err(AdapterError::Unreachable(format!("status {status}"))),
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
        let mut payload = PropertyTable::for_kind(AdapterKind::Lsf).translate(properties)?;
        if !client_name.is_empty() {
            payload.insert("name".into(), Value::String(client_name.into()));
        }
        match script {
            ResolvedScript::Body(body) => {
                payload.insert("script".into(), Value::String(body.clone()));
            }
            ResolvedScript::RemotePath(path) => {
                payload.insert("command".into(), Value::String(path.clone()));
                if !params.is_empty() {
                    payload.insert("environment".into(), json!(params));
                }
            }
        }
        let resp = self
            .authed(self.http.post(self.url("/jobs/submit")), session)
            .json(&Value::Object(payload))
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            200 => {
                let parsed: Value = resp.json().await.map_err(transport_error)?;
                let id = parsed
                    .get("id")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| AdapterError::SubmitRejected("no id in response".into()))?;
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
            .authed(self.http.get(self.url(&format!("/jobs/{remote_id}"))), session)
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
            200 => {
                let parsed: Value = resp.json().await.map_err(transport_error)?;
                let state = parsed
                    .get("status")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string();
                if state.is_empty() {
                    return Err(AdapterError::Unreachable("job info without status".into()));
                }
                Ok(RemoteJobInfo {
                    remote_id: remote_id.to_string(),
                    remote_state: state,
                    start_time: rfc3339_field(&parsed, "startTime"),
                    end_time: rfc3339_field(&parsed, "endTime"),
                    raw: parsed,
                })
            }
            404 => Err(AdapterError::NotFoundRemote(remote_id.to_string())),
            401 | 403 => Err(AdapterError::Auth),
            status => Err(AdapterError::Unreachable(format!("status {status}"))),
        }
    }

    async fn kill(&self, session: &Session, remote_id: &str) -> Result<(), AdapterError> {
        let resp = self
            .authed(
                self.http.post(self.url(&format!("/jobs/{remote_id}/kill"))),
                session,
            )
            .send()
            .await
            .map_err(transport_error)?;
        match resp.status().as_u16() {
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
                    .get(self.url(&format!("/jobfiles/{remote_id}/{remote_path}"))),
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

fn parse_session_cookie(header: &str) -> Option<String> {
    let assignment = header.split(';').next()?;
    let (name, value) = assignment.split_once('=')?;
    (name.trim() == SESSION_COOKIE).then(|| value.trim().to_string())
}

fn rfc3339_field(v: &Value, field: &str) -> Option<DateTime<Utc>> {
    let s = v.get(field)?.as_str()?;
    if s.is_empty() {
        return None;
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}

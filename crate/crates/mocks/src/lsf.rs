//! LSF-style Application Center facade: cookie-session auth via
//! `POST /platform/ws/logon`, then job submit/query/kill and per-job file
//! download under `/platform/ws/...`.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde_json::{json, Value};

use crate::control::control_router;
use crate::faults::FaultGate;
use crate::manager::{FinalState, ManagerCore, MockJob, Phase};

const SESSION_COOKIE: &str = "platform_token";

#[derive(Clone)]
struct Facade {
    core: Arc<ManagerCore>,
    gate: Arc<FaultGate>,
}

pub fn lsf_router(core: Arc<ManagerCore>, gate: Arc<FaultGate>) -> Router {
    Router::new()
        .route("/platform/ws/logon", post(logon))
        .route("/platform/ws/jobs/submit", post(submit))
        .route("/platform/ws/jobs/{id}", get(job_info))
        .route("/platform/ws/jobs/{id}/kill", post(kill))
        .route("/platform/ws/jobfiles/{id}/{*path}", get(job_file))
        .with_state(Facade {
            core: core.clone(),
            gate: gate.clone(),
        })
        .merge(control_router(core, gate))
        .layer(axum::extract::DefaultBodyLimit::max(256 * 1024 * 1024))
}

async fn logon(State(facade): State<Facade>, Json(body): Json<Value>) -> Response {
    let username = body.get("username").and_then(Value::as_str).unwrap_or("");
    let password = body.get("password").and_then(Value::as_str).unwrap_or("");
    match facade.core.open_session(username, password) {
        Some(session) => Response::builder()
            .status(StatusCode::OK)
            .header("set-cookie", format!("{SESSION_COOKIE}={session}; Path=/"))
            .header("content-type", "application/json")
            .body(axum::body::Body::from(
                json!({"token": session}).to_string(),
            ))
            .expect("valid response"),
        None => (
            StatusCode::UNAUTHORIZED,
            Json(json!({"error": "logon failed"})),
        )
            .into_response(),
    }
}

fn session_of(headers: &HeaderMap) -> Option<String> {
    let cookies = headers.get("cookie")?.to_str().ok()?;
    cookies.split(';').find_map(|part| {
        let (name, value) = part.trim().split_once('=')?;
        (name == SESSION_COOKIE).then(|| value.to_string())
    })
}

fn authed(facade: &Facade, headers: &HeaderMap) -> bool {
    session_of(headers).is_some_and(|s| facade.core.session_valid(&s))
}

fn unauthorized() -> Response {
    (
        StatusCode::UNAUTHORIZED,
        Json(json!({"error": "no valid session"})),
    )
        .into_response()
}

async fn submit(
    State(facade): State<Facade>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    if !authed(&facade, &headers) {
        return unauthorized();
    }
    if facade.gate.reject_submits() {
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": "injected submit rejection"})),
        )
            .into_response();
    }
    let text = |field: &str| {
        body.get(field)
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string()
    };
    let mut name = text("name");
    if name.is_empty() {
        name = format!("anonymous-{}", facade.core.clock.now().timestamp_micros());
    }
    let script = if !text("script").is_empty() {
        text("script")
    } else {
        text("command")
    };
    let cwd = text("cwd");
    let output_files: Vec<String> = ["output_file", "error_file"]
        .iter()
        .map(|f| text(f))
        .filter(|v| !v.is_empty())
        .collect();
    let outcome = facade.core.submit(&name, script, body.clone(), cwd, output_files);
    Json(json!({"id": outcome.id})).into_response()
}

async fn job_info(
    State(facade): State<Facade>,
    headers: HeaderMap,
    Path(id): Path<u64>,
) -> Response {
    if !authed(&facade, &headers) {
        return unauthorized();
    }
    match facade.core.job(id) {
        Some(job) => {
            let now = facade.core.clock.now();
            Json(job_json(&job, now)).into_response()
        }
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({"error": format!("job {id} not found")})),
        )
            .into_response(),
    }
}

async fn kill(State(facade): State<Facade>, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    if !authed(&facade, &headers) {
        return unauthorized();
    }
    facade.core.kill(id);
    Json(json!({"ok": true})).into_response()
}

async fn job_file(
    State(facade): State<Facade>,
    headers: HeaderMap,
    Path((id, path)): Path<(u64, String)>,
) -> Response {
    if !authed(&facade, &headers) {
        return unauthorized();
    }
    match facade.core.output(id, &path) {
        Ok(bytes) => bytes.into_response(),
        Err(true) => (
            StatusCode::CONFLICT,
            Json(json!({"error": "job not finished"})),
        )
            .into_response(),
        Err(false) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// LSF has no distinct cancelled state on the wire; killed jobs report EXIT.
fn wire_state(job: &MockJob, now: DateTime<Utc>) -> &'static str {
    match job.phase(now) {
        Phase::Pending => "PEND",
        Phase::Running => "RUN",
        Phase::Cancelled => "EXIT",
        Phase::Final => match job.final_state {
            FinalState::Completed => "DONE",
            FinalState::Failed => "EXIT",
        },
    }
}

fn job_json(job: &MockJob, now: DateTime<Utc>) -> Value {
    let time = |t: Option<DateTime<Utc>>| t.map(|t| t.to_rfc3339()).unwrap_or_default();
    json!({
        "id": job.id,
        "name": job.name,
        "status": wire_state(job, now),
        "startTime": time(job.start_time(now)),
        "endTime": time(job.end_time(now)),
    })
}

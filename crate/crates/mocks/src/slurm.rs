//! Slurm-style HTTP facade: `POST /slurm/v0.0.37/job/submit`,
//! `GET /slurm/v0.0.37/job/{id}`, `DELETE /slurm/v0.0.37/job/{id}`,
//! authenticated by `X-SLURM-USER-NAME` / `X-SLURM-USER-TOKEN` headers.

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
use crate::manager::{ManagerCore, MockJob, Phase};

#[derive(Clone)]
struct Facade {
    core: Arc<ManagerCore>,
    gate: Arc<FaultGate>,
}

pub fn slurm_router(core: Arc<ManagerCore>, gate: Arc<FaultGate>) -> Router {
    Router::new()
        .route("/slurm/v0.0.37/job/submit", post(submit))
        .route("/slurm/v0.0.37/job/{id}", get(job_info).delete(kill))
        .with_state(Facade {
            core: core.clone(),
            gate: gate.clone(),
        })
        .merge(control_router(core, gate))
        .layer(axum::extract::DefaultBodyLimit::max(256 * 1024 * 1024))
}

fn authed(facade: &Facade, headers: &HeaderMap) -> bool {
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).unwrap_or("");
    facade
        .core
        .check_basic_auth(header("X-SLURM-USER-NAME"), header("X-SLURM-USER-TOKEN"))
}

fn unauthorized() -> Response {
    (
        StatusCode::UNAUTHORIZED,
        Json(json!({"errors": [{"error": "authentication failure"}]})),
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
            Json(json!({"errors": [{"error": "injected submit rejection"}]})),
        )
            .into_response();
    }
    let job = body.get("job").cloned().unwrap_or(Value::Null);
    let script = body
        .get("script")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let text = |field: &str| {
        job.get(field)
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string()
    };
    let mut name = text("name");
    if name.is_empty() {
        name = format!("anonymous-{}", facade.core.clock.now().timestamp_micros());
    }
    let cwd = text("current_working_directory");
    let output_files: Vec<String> = ["standard_output", "standard_error"]
        .iter()
        .map(|f| text(f))
        .filter(|v| !v.is_empty())
        .collect();
    let outcome = facade.core.submit(&name, script, job, cwd, output_files);
    Json(json!({"job_id": outcome.id, "errors": []})).into_response()
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
            Json(json!({"jobs": [job_json(&job, now)]})).into_response()
        }
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({"errors": [{"error": format!("job {id} not found")}]})),
        )
            .into_response(),
    }
}

async fn kill(State(facade): State<Facade>, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    if !authed(&facade, &headers) {
        return unauthorized();
    }
    facade.core.kill(id);
    Json(json!({"errors": []})).into_response()
}

fn wire_state(job: &MockJob, now: DateTime<Utc>) -> &'static str {
    match job.phase(now) {
        Phase::Pending => "PENDING",
        Phase::Running => "RUNNING",
        Phase::Cancelled => "CANCELLED",
        Phase::Final => match job.final_state {
            crate::manager::FinalState::Completed => "COMPLETED",
            crate::manager::FinalState::Failed => "FAILED",
        },
    }
}

fn job_json(job: &MockJob, now: DateTime<Utc>) -> Value {
    json!({
        "job_id": job.id,
        "name": job.name,
        "job_state": wire_state(job, now),
        "start_time": job.start_time(now).map(|t| t.timestamp()).unwrap_or(0),
        "end_time": job.end_time(now).map(|t| t.timestamp()).unwrap_or(0),
    })
}

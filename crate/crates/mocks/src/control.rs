//! Control endpoints shared by both mock managers: fault plans, manual clock
//! stepping, request-log and job introspection, and the shared-filesystem
//! emulation (`/_shared/...`). Test-only surface, documented as such.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::faults::{FaultGate, FaultPlan};
use crate::manager::ManagerCore;

#[derive(Clone)]
pub(crate) struct ControlState {
    pub core: Arc<ManagerCore>,
    pub gate: Arc<FaultGate>,
}

pub(crate) fn control_router(core: Arc<ManagerCore>, gate: Arc<FaultGate>) -> Router {
    Router::new()
        .route("/_mock/faults", post(set_faults))
        .route("/_mock/advance", post(advance))
        .route("/_mock/log", get(request_log))
        .route("/_mock/jobs", get(jobs))
        .route("/_shared/fs/{*path}", put(put_shared).get(get_shared))
        .route("/_shared/jobs/{id}/{*path}", get(job_output))
        .with_state(ControlState { core, gate })
}

async fn set_faults(State(state): State<ControlState>, Json(plan): Json<FaultPlan>) -> Response {
    state.gate.set_plan(plan);
    Json(json!({"ok": true})).into_response()
}

#[derive(Deserialize, Default)]
struct Advance {
    #[serde(default)]
    seconds: u64,
    #[serde(default)]
    millis: u64,
}

async fn advance(State(state): State<ControlState>, Json(body): Json<Advance>) -> Response {
    let by = std::time::Duration::from_secs(body.seconds)
        + std::time::Duration::from_millis(body.millis);
    if state.core.advance(by) {
        Json(json!({"now": state.core.clock.now().to_rfc3339()})).into_response()
    } else {
        (
            StatusCode::CONFLICT,
            Json(json!({"error": "manual clock not enabled"})),
        )
            .into_response()
    }
}

async fn request_log(State(state): State<ControlState>) -> Response {
    Json(state.gate.log()).into_response()
}

async fn jobs(State(state): State<ControlState>) -> Response {
    Json(state.core.jobs_view()).into_response()
}

async fn put_shared(
    State(state): State<ControlState>,
    Path(path): Path<String>,
    body: axum::body::Bytes,
) -> Response {
    state.core.put_shared(&path, body.to_vec());
    Json(json!({"stored": path})).into_response()
}

async fn get_shared(State(state): State<ControlState>, Path(path): Path<String>) -> Response {
    match state.core.shared(&path) {
        Some(bytes) => bytes.into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn job_output(
    State(state): State<ControlState>,
    Path((id, path)): Path<(u64, String)>,
) -> Response {
    match state.core.output(id, &path) {
        Ok(bytes) => bytes.into_response(),
        Err(true) => (
            StatusCode::CONFLICT,
            Json(json!({"error": "job not terminal yet"})),
        )
            .into_response(),
        Err(false) => StatusCode::NOT_FOUND.into_response(),
    }
}

//! Admin HTTP API over the reconciler: create, status (one-shot or watch),
//! kill, delete.

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::store::{JobKey, WatchScope};

use super::{Operator, OperatorError, StatusSnapshot};

pub fn admin_router(operator: Operator) -> Router {
    Router::new()
        .route("/v1/jobs", post(create_job))
        .route("/v1/jobs/{namespace}/{name}", get(job_status))
        .route("/v1/jobs/{namespace}/{name}", delete(delete_job))
        .route("/v1/jobs/{namespace}/{name}/kill", post(kill_job))
        .with_state(operator)
}

/// Serve the admin API until the process ends.
pub async fn serve_admin(
    operator: Operator,
    listener: tokio::net::TcpListener,
) -> std::io::Result<()> {
    axum::serve(listener, admin_router(operator)).await
}

fn error_response(e: OperatorError) -> Response {
    let (status, body) = match &e {
        OperatorError::Schema(schema) => (
            StatusCode::BAD_REQUEST,
            json!({ "error": schema.to_string(), "fields": schema.fields() }),
        ),
        OperatorError::AlreadyExists(key) => (
            StatusCode::CONFLICT,
            json!({ "error": e.to_string(), "key": key.to_string(), "kind": "AlreadyExists" }),
        ),
        OperatorError::NotFound(key) => (
            StatusCode::NOT_FOUND,
            json!({ "error": e.to_string(), "key": key.to_string(), "kind": "NotFound" }),
        ),
        OperatorError::InvalidState { key, state } => (
            StatusCode::CONFLICT,
            json!({
                "error": e.to_string(),
                "key": key.to_string(),
                "state": state.to_string(),
                "kind": "InvalidState",
            }),
        ),
        _ => (
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "error": e.to_string() }),
        ),
    };
    (status, Json(body)).into_response()
}

async fn create_job(State(operator): State<Operator>, document: String) -> Response {
    match operator.submit_document(&document).await {
        Ok(key) => (
            StatusCode::CREATED,
            Json(json!({ "namespace": key.namespace, "name": key.name })),
        )
            .into_response(),
        Err(e) => error_response(e),
    }
}

#[derive(serde::Deserialize, Default)]
struct StatusQuery {
    #[serde(default)]
    watch: bool,
}

async fn job_status(
    State(operator): State<Operator>,
    Path((namespace, name)): Path<(String, String)>,
    Query(query): Query<StatusQuery>,
) -> Response {
    let key = JobKey::new(namespace, name);
    if !query.watch {
        return match operator.job_status(&key).await {
            Ok(snapshot) => Json(snapshot).into_response(),
            Err(e) => error_response(e),
        };
    }

    // Streamed watch: one JSON line per observed change, ending once the job
    // is terminal or deleted. Store events cover in-process workers; the
    // fallback poll converges when a worker process writes from outside.
    let initial = match operator.job_status(&key).await {
        Ok(snapshot) => snapshot,
        Err(e) => return error_response(e),
    };
    let store = operator.store();
    let mut watch = store.watch(WatchScope::Key(key.clone()));
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<String>();

    tokio::spawn(async move {
        let mut last_version = initial.version;
        let terminal = initial.is_terminal();
        if tx.send(line(&initial)).is_err() || terminal {
            return;
        }
        let mut poll = tokio::time::interval(std::time::Duration::from_millis(250));
        loop {
            let snapshot = tokio::select! {
                event = watch.recv() => match event {
                    Some(e) if e.kind == crate::store::EventKind::Deleted => None,
                    Some(e) => Some(snapshot_of(&key, &e.record)),
                    None => return,
                },
                _ = poll.tick() => match store.get_record(&key) {
                    Ok(record) => Some(snapshot_of(&key, &record)),
                    Err(_) => None,
                },
            };
            match snapshot {
                Some(s) if s.version > last_version => {
                    last_version = s.version;
                    let done = s.is_terminal();
                    if tx.send(line(&s)).is_err() || done {
                        return;
                    }
                }
                Some(_) => {}
                None => {
                    let _ = tx.send("{\"deleted\":true}\n".to_string());
                    return;
                }
            }
        }
    });

    let stream = futures::stream::unfold(rx, |mut rx| async {
        rx.recv().await.map(|chunk| {
            (
                Ok::<_, std::convert::Infallible>(axum::body::Bytes::from(chunk)),
                rx,
            )
        })
    });
    Response::builder()
        .status(StatusCode::OK)
        .header("content-type", "application/x-ndjson")
        .body(Body::from_stream(stream))
        .expect("valid response")
}

fn snapshot_of(key: &JobKey, record: &crate::store::JobRecord) -> StatusSnapshot {
    use crate::store::keys;
    StatusSnapshot {
        namespace: key.namespace.clone(),
        name: key.name.clone(),
        job_status: record.get(keys::JOB_STATUS).to_string(),
        start_time: record.get(keys::START_TIME).to_string(),
        end_time: record.get(keys::END_TIME).to_string(),
        message: record.get(keys::MESSAGE).to_string(),
        version: record.version,
    }
}

fn line(snapshot: &StatusSnapshot) -> String {
    let mut s = serde_json::to_string(snapshot).expect("snapshot serializes");
    s.push('\n');
    s
}

async fn kill_job(
    State(operator): State<Operator>,
    Path((namespace, name)): Path<(String, String)>,
) -> Response {
    let key = JobKey::new(namespace, name);
    match operator.signal_kill(&key).await {
        Ok(()) => Json(json!({ "killed": key.to_string() })).into_response(),
        Err(e) => error_response(e),
    }
}

async fn delete_job(
    State(operator): State<Operator>,
    Path((namespace, name)): Path<(String, String)>,
) -> Response {
    let key = JobKey::new(namespace, name);
    match operator.delete(&key).await {
        Ok(()) => Json(json!({ "deleted": key.to_string() })).into_response(),
        Err(e) => error_response(e),
    }
}

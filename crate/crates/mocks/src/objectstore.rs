//! S3-compatible mock object store: PUT bucket, PUT/GET object. Validates
//! only the access key inside the Authorization Credential element (the
//! documented simplification; no signature recomputation).

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde_json::json;

use crate::faults::{FaultGate, FaultPlan};

#[derive(Debug)]
pub struct ObjectStoreCore {
    expected_access_key: String,
    buckets: Mutex<BTreeMap<String, BTreeMap<String, Vec<u8>>>>,
}

impl ObjectStoreCore {
    pub fn new(expected_access_key: impl Into<String>) -> Self {
        ObjectStoreCore {
            expected_access_key: expected_access_key.into(),
            buckets: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn create_bucket(&self, bucket: &str) {
        self.buckets.lock().unwrap().entry(bucket.to_string()).or_default();
    }

    pub fn put(&self, bucket: &str, key: &str, content: Vec<u8>) {
        self.buckets
            .lock()
            .unwrap()
            .entry(bucket.to_string())
            .or_default()
            .insert(key.to_string(), content);
    }

    pub fn get(&self, bucket: &str, key: &str) -> Option<Vec<u8>> {
        self.buckets.lock().unwrap().get(bucket)?.get(key).cloned()
    }

    pub fn bucket_exists(&self, bucket: &str) -> bool {
        self.buckets.lock().unwrap().contains_key(bucket)
    }

    pub fn keys(&self, bucket: &str) -> Vec<String> {
        self.buckets
            .lock()
            .unwrap()
            .get(bucket)
            .map(|b| b.keys().cloned().collect())
            .unwrap_or_default()
    }

    fn authorized(&self, headers: &HeaderMap) -> bool {
        let Some(auth) = headers.get("authorization").and_then(|v| v.to_str().ok()) else {
            return false;
        };
        // AWS4-HMAC-SHA256 Credential=<access>/<date>/<region>/s3/aws4_request, ...
        auth.split("Credential=")
            .nth(1)
            .and_then(|rest| rest.split('/').next())
            .is_some_and(|key| key == self.expected_access_key)
    }
}

#[derive(Clone)]
struct Facade {
    core: Arc<ObjectStoreCore>,
    gate: Arc<FaultGate>,
}

pub fn objectstore_router(core: Arc<ObjectStoreCore>, gate: Arc<FaultGate>) -> Router {
    Router::new()
        .route("/_mock/faults", post(set_faults))
        .route("/_mock/log", get(request_log))
        .route("/{bucket}", put(create_bucket))
        .route("/{bucket}/{*key}", put(put_object).get(get_object))
        .with_state(Facade { core, gate })
        .layer(axum::extract::DefaultBodyLimit::max(256 * 1024 * 1024))
}

async fn set_faults(State(facade): State<Facade>, Json(plan): Json<FaultPlan>) -> Response {
    facade.gate.set_plan(plan);
    Json(json!({"ok": true})).into_response()
}

async fn request_log(State(facade): State<Facade>) -> Response {
    Json(facade.gate.log()).into_response()
}

async fn create_bucket(
    State(facade): State<Facade>,
    Path(bucket): Path<String>,
    headers: HeaderMap,
) -> Response {
    if !facade.core.authorized(&headers) {
        return StatusCode::FORBIDDEN.into_response();
    }
    facade.core.create_bucket(&bucket);
    StatusCode::OK.into_response()
}

async fn put_object(
    State(facade): State<Facade>,
    Path((bucket, key)): Path<(String, String)>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Response {
    if !facade.core.authorized(&headers) {
        return StatusCode::FORBIDDEN.into_response();
    }
    if !facade.core.bucket_exists(&bucket) {
        return (StatusCode::NOT_FOUND, "NoSuchBucket").into_response();
    }
    facade.core.put(&bucket, &key, body.to_vec());
    StatusCode::OK.into_response()
}

async fn get_object(
    State(facade): State<Facade>,
    Path((bucket, key)): Path<(String, String)>,
    headers: HeaderMap,
) -> Response {
    if !facade.core.authorized(&headers) {
        return StatusCode::FORBIDDEN.into_response();
    }
    match facade.core.get(&bucket, &key) {
        Some(bytes) => bytes.into_response(),
        None => (StatusCode::NOT_FOUND, "NoSuchKey").into_response(),
    }
}

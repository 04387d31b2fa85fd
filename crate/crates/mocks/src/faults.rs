//! Fault injection and the connection-level serving loop.
//!
//! Requests are served by hyper directly so an injected fault can abort the
//! connection without an HTTP response, which is what an unreachable manager
//! looks like to a client. Control endpoints under `/_mock` are exempt.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use hyper_util::rt::TokioIo;
use serde::{Deserialize, Serialize};
use tower::ServiceExt;

use bridge_core::SharedClock;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FaultPlan {
    /// Fail this many upcoming requests with a connection error.
    #[serde(default)]
    pub drop_next: u32,
    /// Reject job submissions with a server error.
    #[serde(default)]
    pub reject_submits: bool,
    /// Artificial delay before each response.
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RequestLogEntry {
    pub at: DateTime<Utc>,
    pub method: String,
    pub path: String,
    pub dropped: bool,
}

#[derive(Debug)]
pub struct FaultGate {
    clock: SharedClock,
    state: Mutex<GateState>,
}

#[derive(Debug, Default)]
struct GateState {
    plan: FaultPlan,
    log: Vec<RequestLogEntry>,
}

pub struct Decision {
    pub drop: bool,
    pub latency: Duration,
}

impl FaultGate {
    pub fn new(clock: SharedClock) -> Self {
        FaultGate {
            clock,
            state: Mutex::new(GateState::default()),
        }
    }

    pub fn set_plan(&self, plan: FaultPlan) {
        self.state.lock().unwrap().plan = plan;
    }

    pub fn plan(&self) -> FaultPlan {
        self.state.lock().unwrap().plan.clone()
    }

    pub fn reject_submits(&self) -> bool {
        self.state.lock().unwrap().plan.reject_submits
    }

    pub fn log(&self) -> Vec<RequestLogEntry> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn on_request(&self, method: &str, path: &str) -> Decision {
        let mut state = self.state.lock().unwrap();
        let exempt = path.starts_with("/_mock");
        let drop = if !exempt && state.plan.drop_next > 0 {
            state.plan.drop_next -= 1;
            true
        } else {
            false
        };
        let latency = if exempt {
            Duration::ZERO
        } else {
            Duration::from_millis(state.plan.latency_ms)
        };
        state.log.push(RequestLogEntry {
            at: self.clock.now(),
            method: method.to_string(),
            path: path.to_string(),
            dropped: drop,
        });
        Decision { drop, latency }
    }
}

/// Accept loop serving `app` with faults applied per request. Runs until the
/// task is aborted or the listener fails.
pub async fn serve_with_faults(
    listener: tokio::net::TcpListener,
    app: axum::Router,
    gate: Arc<FaultGate>,
) {
    loop {
        let Ok((stream, _peer)) = listener.accept().await else {
            return;
        };
        let app = app.clone();
        let gate = gate.clone();
        tokio::spawn(async move {
            let service = hyper::service::service_fn(move |req: hyper::Request<hyper::body::Incoming>| {
                let app = app.clone();
                let gate = gate.clone();
                async move {
                    let decision = gate.on_request(req.method().as_str(), req.uri().path());
                    if decision.latency > Duration::ZERO {
                        tokio::time::sleep(decision.latency).await;
                    }
                    if decision.drop {
                        // Erroring out of the service tears the connection
                        // down with no response on the wire.
                        return Err(std::io::Error::new(
                            std::io::ErrorKind::ConnectionReset,
                            "injected fault",
                        ));
                    }
                    let response = app
                        .oneshot(req.map(axum::body::Body::new))
                        .await
                        .expect("router is infallible");
                    Ok::<_, std::io::Error>(response)
                }
            });
            let _ = hyper::server::conn::http1::Builder::new()
                .serve_connection(TokioIo::new(stream), service)
                .await;
        });
    }
}

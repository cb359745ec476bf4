//! A stub grounded-detector server speaking the `POST /detect` protocol.
//!
//! Each stub binds an ephemeral local port, answers according to its
//! [`Behavior`], and records every request body it receives.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

#[derive(Debug, Clone)]
pub enum Behavior {
    /// 200 with `{detector_id, boxes}`, boxes sent in the given order.
    Boxes { detector_id: String, boxes: Vec<Value> },
    /// Sleep, then answer like `Boxes` with no boxes.
    Sleep(Duration),
    /// Reply with this status and a short error body.
    Status(u16),
    /// 200 with a verbatim body.
    Raw(String),
}

impl Behavior {
    pub fn boxes(boxes: Vec<Value>) -> Self {
        Behavior::Boxes { detector_id: "stub-detector".into(), boxes }
    }
}

/// `{x, y, w, h, label, confidence}` as the wire carries it.
pub fn wire_box(x: f64, y: f64, w: f64, h: f64, label: &str, confidence: f64) -> Value {
    json!({ "x": x, "y": y, "w": w, "h": h, "label": label, "confidence": confidence })
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub body: Value,
    pub authorization: Option<String>,
}

#[derive(Clone)]
struct Shared {
    behavior: Behavior,
    seen: Arc<Mutex<Vec<Recorded>>>,
}

pub struct StubDetector {
    addr: SocketAddr,
    seen: Arc<Mutex<Vec<Recorded>>>,
    task: JoinHandle<()>,
}

impl StubDetector {
    pub async fn spawn(behavior: Behavior) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let seen = Arc::new(Mutex::new(Vec::new()));
        let app = Router::new()
            .route("/detect", post(detect))
            .with_state(Shared { behavior, seen: seen.clone() });
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(Self { addr, seen, task })
    }

    /// Base URL, without the `/detect` path.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for StubDetector {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn detect(State(shared): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let parsed: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let authorization = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    shared.seen.lock().unwrap().push(Recorded { body: parsed.clone(), authorization });
    if !matches!(parsed.get("prompts"), Some(Value::Array(_))) {
        return (StatusCode::BAD_REQUEST, "expected {prompts: [...]}").into_response();
    }
    match shared.behavior {
        Behavior::Boxes { detector_id, boxes } => {
            axum::Json(json!({ "detector_id": detector_id, "boxes": boxes })).into_response()
        }
        Behavior::Sleep(d) => {
            tokio::time::sleep(d).await;
            axum::Json(json!({ "detector_id": "stub-detector", "boxes": [] })).into_response()
        }
        Behavior::Status(code) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, "stub failure").into_response()
        }
        Behavior::Raw(text) => ([("content-type", "application/json")], text).into_response(),
    }
}

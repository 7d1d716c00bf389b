#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use darklabel::{ServerConfig, Service, Store};
use darklabel_core::{ChatRequest, Completion, CostTable, Error, MockProvider, Provider};
use http_body_util::BodyExt;
use serde_json::Value;
use tokio::sync::watch;
use tower::ServiceExt;

pub const E2E: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/e2e");

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(Path::new(E2E).join(name)).unwrap()
}

pub fn config(state: &Path) -> ServerConfig {
    ServerConfig {
        state_dir: state.to_path_buf(),
        backoff_base_ms: 1,
        ..ServerConfig::default()
    }
}

pub fn service(state: &Path, provider: Arc<dyn Provider>) -> Arc<Service> {
    Arc::new(Service::new(
        Store::open(state).unwrap(),
        provider,
        CostTable::default(),
        config(state),
    ))
}

pub fn mock() -> Arc<dyn Provider> {
    Arc::new(MockProvider::shipped())
}

const INSTRUCTION_MARKER: &str = "concrete DETAILED task instruction";

/// The mock, except that annotation requests wait until the gate opens.
/// Instruction requests pass straight through.
pub struct GatedProvider {
    inner: MockProvider,
    open: watch::Receiver<bool>,
}

impl GatedProvider {
    pub fn new() -> (Self, watch::Sender<bool>) {
        let (tx, rx) = watch::channel(false);
        (
            GatedProvider {
                inner: MockProvider::shipped(),
                open: rx,
            },
            tx,
        )
    }
}

#[async_trait]
impl Provider for GatedProvider {
    fn model(&self) -> &str {
        self.inner.model()
    }

    async fn complete(&self, request: &ChatRequest) -> darklabel_core::Result<Completion> {
        let is_instruction = request
            .last_user_message()
            .is_some_and(|m| m.contains(INSTRUCTION_MARKER));
        if !is_instruction {
            let mut open = self.open.clone();
            open.wait_for(|o| *o).await.expect("gate sender alive");
        }
        self.inner.complete(request).await
    }
}

/// Fails every call the way an unreachable endpoint would.
pub struct DownProvider;

#[async_trait]
impl Provider for DownProvider {
    fn model(&self) -> &str {
        "mock-lexicon-v1"
    }

    async fn complete(&self, _: &ChatRequest) -> darklabel_core::Result<Completion> {
        Err(Error::Transport("connection refused".into()))
    }
}

pub struct Response {
    pub status: StatusCode,
    pub text: String,
}

impl Response {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, body: impl Into<String>) -> Response {
    call_with(app, method, uri, body, None).await
}

pub async fn call_with(
    app: &Router,
    method: &str,
    uri: &str,
    body: impl Into<String>,
    token: Option<&str>,
) -> Response {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = req.body(Body::from(body.into())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Response {
        status,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

pub fn plain_rules_body() -> String {
    let labels = [
        "Extremely Negative",
        "Negative",
        "Neutral",
        "Positive",
        "Extremely Positive",
    ];
    let upsert: Vec<Value> = labels
        .iter()
        .map(|l| {
            serde_json::json!({
                "label": l,
                "rule_text": format!("The tweet reads as {}.", l.to_lowercase()),
                "position": 1
            })
        })
        .collect();
    serde_json::json!({ "upsert": upsert }).to_string()
}

pub const CONTEXT_BODY: &str = r#"{"Q1":"answer to Q1","Q2":"answer to Q2","Q3":"answer to Q3","Q4":"answer to Q4","Q5":"answer to Q5"}"#;

pub const REFUND_RULE: &str = r#"{"upsert":[{"label":"Negative","rule_text":"Mentions a refund: contains(\"refund\") => force","position":2}]}"#;

pub fn tempdir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state");
    (dir, path)
}

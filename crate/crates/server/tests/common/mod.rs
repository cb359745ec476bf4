#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use dietwise::config::Config;
use dietwise::service::Service;
use dietwise::startup::{self, KeySource, Prepared, Running};
use dietwise_core::profiles::SystemClock;
use dietwise_core::security::MasterKey;
use dietwise_core::store::{KvStore, MemoryStore};
use serde_json::{json, Value};

pub const TEST_KEY: [u8; 32] = [0x5a; 32];

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(rel: &str) -> PathBuf {
    root().join("fixtures").join(rel)
}

/// Food fixture dataset, fast hashing, `admin` as the only admin, ephemeral
/// port. `extra` is appended verbatim.
pub fn config(extra: &str) -> Config {
    let text = format!(
        r#"
[server]
bind = "127.0.0.1:0"

[auth]
admins = ["admin"]
fast_hashing = true

[dataset]
annotations = "fixtures/coco/food.json"
splits_dir = "fixtures/splits/food-seed-7"

{extra}
"#
    );
    Config::from_toml(&text, &root()).expect("test config")
}

pub fn key() -> Arc<MasterKey> {
    Arc::new(MasterKey::from_bytes("test", &TEST_KEY).unwrap())
}

pub struct TestServer {
    pub running: Running,
    pub client: reqwest::Client,
}

pub async fn spawn(config: Config) -> TestServer {
    spawn_with_store(config, Arc::new(MemoryStore::new())).await
}

pub async fn spawn_with_store(config: Config, store: Arc<dyn KvStore>) -> TestServer {
    let service = Arc::new(Service::build(&config, key(), store, Arc::new(SystemClock)).expect("service"));
    let running = startup::start(Prepared { config, service, tls: None, key_source: KeySource::Flag })
        .await
        .expect("start");
    TestServer { running, client: reqwest::Client::new() }
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.running.addr)
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: Value) -> (u16, Value) {
        let mut req = self.client.post(self.url(path)).json(&body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.expect("send");
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (u16, Value) {
        let mut req = self.client.get(self.url(path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.expect("send");
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn metrics_text(&self) -> String {
        self.client.get(self.url("/metrics")).send().await.unwrap().text().await.unwrap()
    }

    /// Registers `name` with the given conditions and returns a session token.
    pub async fn user(&self, name: &str, conditions: &[&str]) -> String {
        let (status, body) = self
            .post(
                "/api/v1/auth/register",
                None,
                json!({ "name": name, "secret": "correct horse", "conditions": conditions }),
            )
            .await;
        assert_eq!(status, 201, "register {name}: {body}");
        let (status, body) =
            self.post("/api/v1/auth/login", None, json!({ "name": name, "secret": "correct horse" })).await;
        assert_eq!(status, 200, "login {name}: {body}");
        body["token"].as_str().unwrap().to_string()
    }
}

/// Counter and histogram-count samples for one endpoint, parsed with the
/// third-party exposition parser.
pub fn scrape(text: &str, endpoint: &str) -> (f64, f64) {
    let lines = text.lines().map(|l| Ok(l.to_string()));
    let parsed = prometheus_parse::Scrape::parse(lines).expect("exposition parses");
    let mut requests = 0.0;
    let mut hist_count = None;
    for s in &parsed.samples {
        if s.labels.get("endpoint") != Some(endpoint) {
            continue;
        }
        match (&s.metric[..], &s.value) {
            ("dietwise_http_requests_total", prometheus_parse::Value::Counter(v)) => requests += v,
            ("dietwise_http_requests_total", prometheus_parse::Value::Untyped(v)) => requests += v,
            ("dietwise_http_request_duration_ms", prometheus_parse::Value::Histogram(h)) => {
                hist_count = h.iter().find(|b| b.less_than.is_infinite()).map(|b| b.count);
            }
            _ => {}
        }
    }
    (requests, hist_count.expect("histogram present"))
}

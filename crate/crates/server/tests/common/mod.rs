#![allow(dead_code)]

use axum::body::{Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use qgen_core::datastore::Store;
use qgen_core::llm_gateway::Gateway;
use qgen_server::{router, Context};
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;
use tower::ServiceExt;

pub struct TestApp {
    pub app: Router,
    pub ctx: Arc<Context>,
}

impl TestApp {
    pub fn new(workspace: &Path, train_cmd: Option<&str>) -> Self {
        let store = Store::open(workspace).unwrap().with_lock_timeout(Duration::from_millis(200));
        let ctx = Arc::new(Context::new(store, Gateway::new(), train_cmd.map(str::to_string)).unwrap());
        TestApp {
            app: router(ctx.clone()),
            ctx,
        }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let body = match body {
            Some(v) => Body::from(serde_json::to_vec(&v).unwrap()),
            None => Body::empty(),
        };
        self.raw(method, uri, body, "application/json").await
    }

    pub async fn raw(&self, method: Method, uri: &str, body: Body, content_type: &str) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", content_type)
            .body(body)
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }
}

/// A chat-completions endpoint answering two pairs about the first
/// `marker*` token of each prompt's context.
pub async fn spawn_mock_llm() -> String {
    let app = Router::new().fallback(|body: Bytes| async move {
        let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        let user = req["messages"]
            .as_array()
            .and_then(|m| m.last())
            .and_then(|m| m["content"].as_str())
            .unwrap_or_default()
            .to_string();
        let marker = user
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
            .find(|t| t.starts_with("marker"))
            .unwrap_or("nothing")
            .to_string();
        let text = if user.contains("Question:") {
            format!("The answer mentions {marker}.")
        } else {
            json!([
                {"question": format!("What is {marker}?"), "answer": marker.clone()},
                {"question": format!("Where is {marker} listed?"), "answer": format!("Beside {marker}.")},
            ])
            .to_string()
        };
        axum::Json(json!({"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]}))
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

pub fn provider_json(id: &str, base_url: &str) -> Value {
    json!({
        "provider_id": id,
        "base_url": base_url,
        "model_name": "mock",
        "retry": {"base_delay_ms": 1, "multiplier": 2.0, "max_delay_ms": 5},
        "auth_header": {"name": "Authorization", "secret": "Bearer super-secret-token"}
    })
}

pub const DOC_MD: &str = "# Archive\n\nRivers carry sediment toward distant deltas. The archive lists marker7 beside its entry. Farmers rotate barley with clover.\n\n# Ledger\n\nClerks balance the accounts each evening. The ledger records marker8 in red ink. Nobody audits the ink.\n";

/// Recursively drop `created_at`/`started_at`/`ended_at` so records from
/// two runs can be compared structurally.
pub fn strip_times(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["created_at", "started_at", "ended_at"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_times);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_times),
        _ => {}
    }
}

/// All JSON records of one kind directory, keyed by file name, timestamps stripped.
pub fn records(workspace: &Path, kind: &str) -> Vec<(String, Value)> {
    let dir = workspace.join(kind);
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return out;
    };
    for entry in entries {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let mut v: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
            strip_times(&mut v);
            out.push((path.file_name().unwrap().to_string_lossy().into_owned(), v));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub async fn wait_for<F: Fn(&Value) -> bool>(app: &TestApp, uri: &str, done: F) -> Value {
    for _ in 0..200 {
        let (status, body) = app.get(uri).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        if done(&body) {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("timed out polling {uri}");
}

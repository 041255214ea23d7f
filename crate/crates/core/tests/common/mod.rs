//! Shared fixtures for integration tests: a scripted HTTP model endpoint and
//! small workspace builders.
#![allow(dead_code)]

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::Router;
use qgen_core::llm_gateway::{Gateway, ProviderConfig, RetryPolicy};
use serde_json::{json, Value};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use url::Url;

type Handler = dyn Fn(usize, &Value) -> (u16, Value) + Send + Sync;

/// A local HTTP server answering every POST through a closure.
pub struct MockLlm {
    pub base_url: Url,
    calls: Arc<AtomicUsize>,
}

impl MockLlm {
    /// `respond(call_index, request_body)` returns the status and JSON body.
    pub async fn start(respond: impl Fn(usize, &Value) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let calls = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(respond);
        let counter = calls.clone();
        let app = Router::new().fallback(move |body: Bytes| {
            let handler = handler.clone();
            let counter = counter.clone();
            async move {
                let idx = counter.fetch_add(1, Ordering::SeqCst);
                let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let (status, reply) = handler(idx, &request);
                (StatusCode::from_u16(status).unwrap(), axum::Json(reply)).into_response()
            }
        });
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        MockLlm {
            base_url: Url::parse(&format!("http://{addr}/v1/")).unwrap(),
            calls,
        }
    }

    /// Replays `statuses` in order, answering `text` on any 2xx.
    pub async fn scripted(statuses: Vec<u16>, text: &'static str) -> Self {
        MockLlm::start(move |i, _| {
            let status = statuses.get(i).copied().unwrap_or(200);
            if (200..300).contains(&status) {
                (status, chat_body(text))
            } else {
                (status, json!({"error": {"message": "scripted failure"}}))
            }
        })
        .await
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Provider config with millisecond backoff so retry tests stay fast.
    pub fn provider(&self, id: &str) -> ProviderConfig {
        let mut cfg = ProviderConfig::new(id, self.base_url.clone(), "mock-model");
        cfg.retry = RetryPolicy {
            base_delay_ms: 1,
            multiplier: 2.0,
            max_delay_ms: 5,
        };
        cfg.timeout_ms = 5_000;
        cfg
    }

    pub fn gateway(&self, id: &str) -> Gateway {
        let gateway = Gateway::new();
        gateway.register_provider(self.provider(id)).unwrap();
        gateway
    }
}

/// An OpenAI-style chat completion body.
pub fn chat_body(text: &str) -> Value {
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
    })
}

/// The last user message of a chat request.
pub fn user_message(request: &Value) -> String {
    request["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string()
}

/// The chunk text embedded in a generation prompt.
pub fn prompt_context(request: &Value) -> String {
    let user = user_message(request);
    let start = user.find("\"\"\"\n").map(|i| i + 4).unwrap_or(0);
    let end = user[start..].find("\n\"\"\"").map(|i| start + i).unwrap_or(user.len());
    user[start..end].to_string()
}

/// First whitespace token of `text` that starts with `prefix`, edge punctuation stripped.
pub fn find_marker(text: &str, prefix: &str) -> Option<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|t| t.starts_with(prefix))
        .map(str::to_string)
}

/// A mock that answers two JSON pairs per chunk about the chunk's first
/// `marker*` token, and garbage when the chunk contains `garbage_word`.
pub async fn pair_mock(garbage_word: Option<&'static str>) -> MockLlm {
    MockLlm::start(move |_, req| {
        let context = prompt_context(req);
        if garbage_word.is_some_and(|g| context.contains(g)) {
            return (200, chat_body("I am unable to comply with that format, sorry."));
        }
        let marker = find_marker(&context, "marker").unwrap_or_else(|| "nothing".into());
        let pairs = json!([
            {"question": format!("What is {marker}?"), "answer": format!("{marker}")},
            {"question": format!("Where does {marker} appear?"), "answer": format!("It appears as {marker}.")},
        ]);
        (200, chat_body(&pairs.to_string()))
    })
    .await
}

/// Markdown document with `sections` sections, each holding one paragraph
/// whose second sentence carries a unique marker token.
pub fn marker_markdown(doc: usize, sections: usize) -> String {
    let mut out = String::new();
    for s in 0..sections {
        out.push_str(&format!("# Section {doc} {s}\n\n"));
        out.push_str(&format!(
            "Rivers carry sediment toward distant deltas every spring. \
             The archive lists marker{doc}x{s} beside its catalogue entry. \
             Farmers rotate barley with clover to rest tired fields.\n\n"
        ));
    }
    out
}

pub fn write_file(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(body.as_bytes()).unwrap();
    path
}

//! Chat-completions client with retries and a provider registry.
//!
//! Every backend (hosted vendors and local inference servers alike) is
//! reached through the same wire format:
//!
//! ```text
//! POST {base_url}/chat/completions
//! {"model", "messages": [{"role", "content"}], "temperature", "max_tokens"}
//! -> {"choices": [{"message": {"content"}, "finish_reason"}]}
//! ```
//!
//! The text-completion dialect posts `{"model", "prompt", ...}` to
//! `{base_url}/completions` and reads `choices[0].text`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};
use thiserror::Error;
use tokio::sync::Semaphore;
use tracing::debug;
use url::Url;

pub const DEFAULT_MAX_CONCURRENCY: usize = 4;

/// A credential that never shows up in logs, errors or serialized output.
#[derive(Clone, PartialEq, Eq, Deserialize)]
#[serde(transparent)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

impl Serialize for Secret {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("[redacted]")
    }
}

/// Header sent with every request, e.g. `Authorization: Bearer ...`.
///
/// When deserializing, the secret may be given inline (`secret`) or read from
/// an environment variable (`secret_env`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAuthHeader")]
pub struct AuthHeader {
    pub name: String,
    pub secret: Secret,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAuthHeader {
    name: String,
    #[serde(default)]
    secret: Option<Secret>,
    #[serde(default)]
    secret_env: Option<String>,
}

impl TryFrom<RawAuthHeader> for AuthHeader {
    type Error = String;
    fn try_from(raw: RawAuthHeader) -> Result<Self, String> {
        let secret = match (raw.secret, raw.secret_env) {
            (Some(s), None) => s,
            (None, Some(var)) => Secret(
                std::env::var(&var).map_err(|_| format!("environment variable {var} is not set"))?,
            ),
            _ => return Err("auth_header needs exactly one of secret or secret_env".into()),
        };
        Ok(AuthHeader {
            name: raw.name,
            secret,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WireDialect {
    #[default]
    ChatCompletions,
    TextCompletion,
}

/// Exponential backoff with full jitter: attempt `k` sleeps a uniform
/// random duration in `[0, min(max_delay, base * multiplier^k)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay_ms: 500,
            multiplier: 2.0,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay_cap(&self, attempt: u32) -> Duration {
        let cap = self.base_delay_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(cap.min(self.max_delay_ms as f64) as u64)
    }

    fn delay(&self, attempt: u32) -> Duration {
        let cap = self.delay_cap(attempt).as_millis() as u64;
        Duration::from_millis(rand::rng().random_range(0..=cap))
    }
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    2
}

fn default_concurrency() -> usize {
    DEFAULT_MAX_CONCURRENCY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub base_url: Url,
    #[serde(default)]
    pub auth_header: Option<AuthHeader>,
    pub model_name: String,
    #[serde(default)]
    pub wire_dialect: WireDialect,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Upper bound on in-flight requests to this provider.
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

impl ProviderConfig {
    pub fn new(provider_id: impl Into<String>, base_url: Url, model_name: impl Into<String>) -> Self {
        ProviderConfig {
            provider_id: provider_id.into(),
            base_url,
            auth_header: None,
            model_name: model_name.into(),
            wire_dialect: WireDialect::ChatCompletions,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            retry: RetryPolicy::default(),
            max_concurrency: DEFAULT_MAX_CONCURRENCY,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidConfig(m.to_string()));
        if self.provider_id.trim().is_empty() {
            return bad("provider_id must not be empty");
        }
        if !matches!(self.base_url.scheme(), "http" | "https") {
            return bad("base_url must be http or https");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive");
        }
        if self.max_concurrency == 0 {
            return bad("max_concurrency must be positive");
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.as_str().trim_end_matches('/');
        match self.wire_dialect {
            WireDialect::ChatCompletions => format!("{base}/chat/completions"),
            WireDialect::TextCompletion => format!("{base}/completions"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn label(&self) -> &'static str {
        match self {
            Role::System => "System",
            Role::User => "User",
            Role::Assistant => "Assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let Some(first) = self.messages.first() else {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        };
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }

    fn body(&self, cfg: &ProviderConfig) -> Value {
        match cfg.wire_dialect {
            WireDialect::ChatCompletions => json!({
                "model": cfg.model_name,
                "messages": self.messages,
                "temperature": self.temperature,
                "max_tokens": self.max_output_tokens,
            }),
            WireDialect::TextCompletion => json!({
                "model": cfg.model_name,
                "prompt": self.flattened_prompt(),
                "temperature": self.temperature,
                "max_tokens": self.max_output_tokens,
            }),
        }
    }

    /// All messages as one prompt for text-completion endpoints.
    pub fn flattened_prompt(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(m.role.label());
            out.push_str(": ");
            out.push_str(&m.content);
            out.push_str("\n\n");
        }
        out.push_str("Assistant:");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("provider '{0}' is not registered")]
    ProviderNotFound(String),
    #[error("provider '{0}' is already registered")]
    DuplicateProvider(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected (HTTP {status})")]
    AuthError { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("unparseable response: {0}")]
    ProtocolError(String),
    #[error("upstream error after {attempts} attempts: {message}")]
    UpstreamError {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("request rejected (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::ProviderNotFound(_) => "provider_not_found",
            GatewayError::DuplicateProvider(_) => "duplicate_provider",
            GatewayError::InvalidConfig(_) => "invalid_config",
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::AuthError { .. } => "auth_error",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::Timeout { .. } => "timeout",
            GatewayError::ProtocolError(_) => "protocol_error",
            GatewayError::UpstreamError { .. } => "upstream_error",
            GatewayError::Rejected { .. } => "upstream_rejected",
        }
    }
}

enum Attempt {
    Done(Result<(String, String), GatewayError>),
    Retry(GatewayError),
}

struct ProviderEntry {
    config: ProviderConfig,
    permits: Semaphore,
}

/// Registry of providers plus a shared HTTP client.
pub struct Gateway {
    client: reqwest::Client,
    providers: RwLock<BTreeMap<String, Arc<ProviderEntry>>>,
}

impl Default for Gateway {
    fn default() -> Self {
        Gateway::new()
    }
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("providers", &self.list_providers().len())
            .finish()
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            client: reqwest::Client::new(),
            providers: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn register_provider(&self, config: ProviderConfig) -> Result<(), GatewayError> {
        config.validate()?;
        let mut map = self.providers.write().unwrap_or_else(|p| p.into_inner());
        if map.contains_key(&config.provider_id) {
            return Err(GatewayError::DuplicateProvider(config.provider_id));
        }
        let entry = ProviderEntry {
            permits: Semaphore::new(config.max_concurrency),
            config,
        };
        map.insert(entry.config.provider_id.clone(), Arc::new(entry));
        Ok(())
    }

    /// Registered providers, ordered by id.
    pub fn list_providers(&self) -> Vec<ProviderConfig> {
        let map = self.providers.read().unwrap_or_else(|p| p.into_inner());
        map.values().map(|e| e.config.clone()).collect()
    }

    pub fn provider(&self, provider_id: &str) -> Result<ProviderConfig, GatewayError> {
        Ok(self.entry(provider_id)?.config.clone())
    }

    pub fn has_provider(&self, provider_id: &str) -> bool {
        self.entry(provider_id).is_ok()
    }

    fn entry(&self, provider_id: &str) -> Result<Arc<ProviderEntry>, GatewayError> {
        let map = self.providers.read().unwrap_or_else(|p| p.into_inner());
        map.get(provider_id)
            .cloned()
            .ok_or_else(|| GatewayError::ProviderNotFound(provider_id.to_string()))
    }

    /// Send `req` to a registered provider, retrying transient failures.
    ///
    /// HTTP 429, 5xx, timeouts and connection failures are retried up to
    /// `max_retries` times; any other 4xx fails immediately.
    pub async fn chat(&self, provider_id: &str, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let entry = self.entry(provider_id)?;
        let _permit = entry
            .permits
            .acquire()
            .await
            .map_err(|_| GatewayError::ProviderNotFound(provider_id.to_string()))?;
        let cfg = &entry.config;
        let started = Instant::now();
        let body = req.body(cfg);
        let mut attempt = 0u32;
        loop {
            match self.attempt(cfg, &body, attempt + 1).await {
                Attempt::Done(result) => {
                    let (text, finish_reason) = result?;
                    return Ok(ChatResponse {
                        text,
                        finish_reason,
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                }
                Attempt::Retry(err) => {
                    if attempt >= cfg.max_retries {
                        return Err(err);
                    }
                    let delay = cfg.retry.delay(attempt);
                    debug!(provider = %cfg.provider_id, attempt, ?delay, error = %err, "retrying");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }

    async fn attempt(&self, cfg: &ProviderConfig, body: &Value, attempts: u32) -> Attempt {
        let mut request = self
            .client
            .post(cfg.endpoint())
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .json(body);
        if let Some(auth) = &cfg.auth_header {
            request = request.header(auth.name.as_str(), auth.secret.expose());
        }
        let response = match request.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(GatewayError::Timeout { attempts }),
            Err(e) => {
                return Attempt::Retry(GatewayError::UpstreamError {
                    status: None,
                    attempts,
                    message: format!("transport failure: {}", e.without_url()),
                })
            }
        };
        let status = response.status().as_u16();
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(GatewayError::Timeout { attempts }),
            Err(e) => {
                return Attempt::Retry(GatewayError::UpstreamError {
                    status: Some(status),
                    attempts,
                    message: format!("failed reading body: {}", e.without_url()),
                })
            }
        };
        match status {
            200..=299 => Attempt::Done(extract_completion(cfg.wire_dialect, &text)),
            401 | 403 => Attempt::Done(Err(GatewayError::AuthError { status })),
            429 => Attempt::Retry(GatewayError::RateLimited { attempts }),
            500..=599 => Attempt::Retry(GatewayError::UpstreamError {
                status: Some(status),
                attempts,
                message: snippet(&text),
            }),
            _ => Attempt::Done(Err(GatewayError::Rejected {
                status,
                message: snippet(&text),
            })),
        }
    }
}

/// Pull the first choice's text out of a completion response body.
pub fn extract_completion(dialect: WireDialect, body: &str) -> Result<(String, String), GatewayError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::ProtocolError(e.to_string()))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::ProtocolError("response has no choices".into()))?;
    let text = match dialect {
        WireDialect::ChatCompletions => choice.pointer("/message/content"),
        WireDialect::TextCompletion => choice.get("text"),
    }
    .and_then(Value::as_str)
    .ok_or_else(|| GatewayError::ProtocolError("choice has no text content".into()))?;
    let finish = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("unknown");
    Ok((text.to_string(), finish.to_string()))
}

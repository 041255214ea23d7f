//! The error envelope shared by the HTTP API and the CLI.

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use qgen_core::corpus::{CorpusError, ParseError};
use qgen_core::datastore::{ExportError, StoreError};
use qgen_core::explorer::ExplorerError;
use qgen_core::llm_gateway::GatewayError;
use qgen_core::metrics::MetricError;
use qgen_core::promptkit::{GenerateError, PromptError};
use qgen_core::trainjobs::JobError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Every machine code an API error can carry.
pub const ERROR_CODES: &[&str] = &[
    "not_found",
    "method_not_allowed",
    "usage_error",
    "invalid_body",
    "invalid_query",
    "validation_error",
    "empty_name",
    "duplicate_name",
    "empty_document",
    "parse_error",
    "no_examples",
    "empty_group",
    "invalid_filter",
    "too_few_pairs",
    "invalid_template",
    "missing_export",
    "spawn_error",
    "conflict",
    "workspace_locked",
    "workspace_unavailable",
    "corrupt_record",
    "upstream_failure",
    "internal",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        debug_assert!(ERROR_CODES.contains(&code), "unpublished error code {code}");
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(404, "not_found", message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        ApiError::new(422, "validation_error", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(500, "internal", message)
    }

    /// Process exit code for the CLI: 2 for usage problems, 1 for any validated failure.
    pub fn exit_code(&self) -> u8 {
        if self.code == "usage_error" {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = r.status().as_u16();
        let code = if status == 422 { "validation_error" } else { "invalid_body" };
        ApiError::new(status, code, r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::new(400, "invalid_query", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(400, "invalid_query", r.body_text())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound { kind, id } => {
                ApiError::not_found(e.to_string()).with_details(json!({"kind": kind, "id": id}))
            }
            StoreError::WorkspaceLocked { .. } => ApiError::new(409, "workspace_locked", e.to_string()),
            StoreError::CorruptRecord { path, .. } => ApiError::new(500, "corrupt_record", e.to_string())
                .with_details(json!({"path": path.display().to_string()})),
            StoreError::Io { .. } | StoreError::Serialize(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        let details = serde_json::to_value(&e.position).unwrap_or(Value::Null);
        ApiError::new(422, "parse_error", e.to_string()).with_details(json!({"position": details}))
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::EmptyName => ApiError::new(422, "empty_name", e.to_string()),
            CorpusError::DuplicateName(_) => ApiError::new(409, "duplicate_name", e.to_string()),
            CorpusError::GroupNotFound(_) | CorpusError::NotFound(_) => ApiError::not_found(e.to_string()),
            CorpusError::Parse(p) => p.into(),
            CorpusError::EmptyDocument => ApiError::new(422, "empty_document", e.to_string()),
            CorpusError::Store(s) => s.into(),
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let details = json!({"gateway_code": e.code()});
        match e {
            GatewayError::ProviderNotFound(_) => ApiError::not_found(e.to_string()),
            GatewayError::DuplicateProvider(_) => ApiError::new(409, "conflict", e.to_string()),
            GatewayError::InvalidConfig(_) | GatewayError::InvalidRequest(_) => ApiError::validation(e.to_string()),
            _ => ApiError::new(502, "upstream_failure", e.to_string()),
        }
        .with_details(details)
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::NoExamples => ApiError::new(422, "no_examples", e.to_string()),
            PromptError::DocNotFound(_) | PromptError::ExampleNotFound(_) => ApiError::not_found(e.to_string()),
            PromptError::Store(s) => s.into(),
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<GenerateError> for ApiError {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::GroupNotFound(_) => ApiError::not_found(e.to_string()),
            GenerateError::EmptyGroup(_) => ApiError::new(422, "empty_group", e.to_string()),
            GenerateError::Provider(g) => g.into(),
            GenerateError::NoExamples(doc) => {
                ApiError::new(422, "no_examples", format!("document '{doc}' has no example pairs"))
                    .with_details(json!({"doc_id": doc}))
            }
            GenerateError::InvalidConfig(_) => ApiError::validation(e.to_string()),
            GenerateError::AllChunksFailed(_) => ApiError::new(502, "upstream_failure", e.to_string()),
            GenerateError::Store(s) => s.into(),
            GenerateError::Corpus(c) => c.into(),
        }
    }
}

impl From<MetricError> for ApiError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::UnknownMetric(_) | MetricError::UnknownField(_) | MetricError::MalformedFilter(_) => {
                ApiError::new(400, "invalid_filter", e.to_string())
            }
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<ExportError> for ApiError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::DatasetNotFound(_) => ApiError::not_found(e.to_string()),
            ExportError::TooFewPairs(_) => ApiError::new(422, "too_few_pairs", e.to_string()),
            ExportError::InvalidSpec(_) => ApiError::validation(e.to_string()),
            ExportError::Store(s) => s.into(),
            ExportError::Io { .. } => ApiError::internal(e.to_string()),
        }
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::UnknownPlaceholder(_) | JobError::InvalidTemplate => {
                ApiError::new(422, "invalid_template", e.to_string())
            }
            JobError::MissingExport(_) => ApiError::new(422, "missing_export", e.to_string()),
            JobError::InvalidParams(_) => ApiError::validation(e.to_string()),
            JobError::SpawnError { .. } => ApiError::new(422, "spawn_error", e.to_string()),
            JobError::Conflict(_) | JobError::NotRunning(_) => ApiError::new(409, "conflict", e.to_string()),
            JobError::NotFound(_) => ApiError::not_found(e.to_string()),
            JobError::Transition(_) => ApiError::new(409, "conflict", e.to_string()),
            JobError::Store(s) => s.into(),
            JobError::Io { .. } => ApiError::internal(e.to_string()),
        }
    }
}

impl From<ExplorerError> for ApiError {
    fn from(e: ExplorerError) -> Self {
        match e {
            ExplorerError::DocNotFound(_) => ApiError::not_found(e.to_string()),
            ExplorerError::EmptyQuestion => ApiError::validation(e.to_string()),
            ExplorerError::Provider(g) => g.into(),
            ExplorerError::BothModelsFailed(..) => ApiError::new(502, "upstream_failure", e.to_string()),
            ExplorerError::Store(s) => s.into(),
        }
    }
}

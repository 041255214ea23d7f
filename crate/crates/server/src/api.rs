//! The `/api/v1` route table.

use crate::error::ApiError;
use crate::ops::{self, CompareRequest, Context, CreateGroup, GenerateRequest, IngestDocument, NewExample, PairsQuery, TrainRequest};
use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qgen_core::corpus;
use qgen_core::datastore::{DatasetRecord, DatasetSummary, SplitSpec};
use qgen_core::explorer;
use qgen_core::llm_gateway::ProviderConfig;
use qgen_core::promptkit;
use qgen_core::trainjobs::TrainingJob;
use serde::Serialize;
use serde_json::{json, Value};
use std::sync::Arc;

type AppState = Arc<Context>;
type ApiResult<T> = Result<T, ApiError>;

/// JSON body extractor whose rejections use the API error envelope.
#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
pub struct Body<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
pub struct Path<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
pub struct Query<T>(pub T);

fn created<T: Serialize>(value: T) -> Response {
    (StatusCode::CREATED, Json(value)).into_response()
}

fn accepted(value: Value) -> Response {
    (StatusCode::ACCEPTED, Json(value)).into_response()
}

fn deleted(id: &str) -> Json<Value> {
    Json(json!({ "deleted": id }))
}

/// Run blocking workspace I/O off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

pub fn router(ctx: Arc<Context>) -> Router {
    let api = Router::new()
        .route("/groups", post(create_group).get(list_groups))
        .route("/groups/{group_id}", get(get_group).delete(delete_group))
        .route("/groups/{group_id}/documents", post(ingest_document).get(list_documents))
        .route(
            "/groups/{group_id}/documents/{doc_id}",
            get(get_document).delete(delete_document),
        )
        .route("/documents/{doc_id}/text", get(document_text))
        .route("/documents/{doc_id}/examples", post(add_example).get(list_examples))
        .route("/documents/{doc_id}/examples/{example_id}", get(get_example).delete(delete_example))
        .route("/generate", post(generate))
        .route("/runs/{run_id}", get(run_status))
        .route("/datasets", get(list_datasets))
        .route("/datasets/{dataset_id}", get(get_dataset))
        .route("/datasets/{dataset_id}/pairs", get(list_pairs))
        .route("/datasets/{dataset_id}/export", post(export_dataset))
        .route("/pairs/{pair_id}/attribution", get(pair_attribution))
        .route("/providers", post(register_provider).get(list_providers))
        .route("/train", post(train))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{job_id}", get(job_status).delete(cancel_job))
        .route("/compare", post(compare))
        .route("/comparisons", get(list_comparisons))
        .method_not_allowed_fallback(method_not_allowed);
    Router::new()
        .nest("/api/v1", api)
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .with_state(ctx)
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(405, "method_not_allowed", "method not allowed on this route")
}

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub workspace: String,
    pub version: &'static str,
}

async fn healthz(State(ctx): State<AppState>) -> Response {
    let workspace = ctx.workspace().display().to_string();
    match std::fs::read_dir(ctx.workspace()) {
        Ok(_) => Json(Health {
            status: "ok",
            workspace,
            version: env!("CARGO_PKG_VERSION"),
        })
        .into_response(),
        Err(e) => ApiError::new(503, "workspace_unavailable", format!("workspace {workspace} is unreadable: {e}"))
            .into_response(),
    }
}

async fn create_group(State(ctx): State<AppState>, Body(req): Body<CreateGroup>) -> ApiResult<Response> {
    let group = blocking(move || ops::create_group(&ctx.store, &req)).await?;
    Ok(created(group))
}

async fn list_groups(State(ctx): State<AppState>) -> ApiResult<Response> {
    let groups = blocking(move || Ok(corpus::list_groups(&ctx.store)?)).await?;
    Ok(Json(groups).into_response())
}

async fn get_group(State(ctx): State<AppState>, Path(group_id): Path<String>) -> ApiResult<Response> {
    let group = blocking(move || Ok(corpus::get_group(&ctx.store, &group_id)?)).await?;
    Ok(Json(group).into_response())
}

async fn delete_group(State(ctx): State<AppState>, Path(group_id): Path<String>) -> ApiResult<Json<Value>> {
    let id = group_id.clone();
    blocking(move || Ok(corpus::delete_group(&ctx.store, &id)?)).await?;
    Ok(deleted(&group_id))
}

async fn ingest_document(
    State(ctx): State<AppState>,
    Path(group_id): Path<String>,
    Body(req): Body<IngestDocument>,
) -> ApiResult<Response> {
    let doc = blocking(move || ops::ingest(&ctx.store, &group_id, &req)).await?;
    Ok(created(doc))
}

async fn list_documents(State(ctx): State<AppState>, Path(group_id): Path<String>) -> ApiResult<Response> {
    let docs = blocking(move || Ok(corpus::list_documents(&ctx.store, &group_id)?)).await?;
    Ok(Json(docs).into_response())
}

async fn get_document(
    State(ctx): State<AppState>,
    Path((group_id, doc_id)): Path<(String, String)>,
) -> ApiResult<Response> {
    let doc = blocking(move || ops::group_document(&ctx.store, &group_id, &doc_id)).await?;
    Ok(Json(doc).into_response())
}

async fn delete_document(
    State(ctx): State<AppState>,
    Path((group_id, doc_id)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let id = doc_id.clone();
    blocking(move || {
        ops::group_document(&ctx.store, &group_id, &id)?;
        Ok(corpus::delete_document(&ctx.store, &id)?)
    })
    .await?;
    Ok(deleted(&doc_id))
}

async fn document_text(State(ctx): State<AppState>, Path(doc_id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(blocking(move || ops::document_text(&ctx.store, &doc_id)).await?))
}

async fn add_example(
    State(ctx): State<AppState>,
    Path(doc_id): Path<String>,
    Body(req): Body<NewExample>,
) -> ApiResult<Response> {
    let ex = blocking(move || Ok(promptkit::add_example(&ctx.store, &doc_id, &req.question, &req.answer)?)).await?;
    Ok(created(ex))
}

async fn list_examples(State(ctx): State<AppState>, Path(doc_id): Path<String>) -> ApiResult<Response> {
    let list = blocking(move || {
        corpus::get_document(&ctx.store, &doc_id)?;
        Ok(promptkit::list_examples(&ctx.store, &doc_id)?)
    })
    .await?;
    Ok(Json(list).into_response())
}

async fn get_example(
    State(ctx): State<AppState>,
    Path((doc_id, example_id)): Path<(String, String)>,
) -> ApiResult<Response> {
    let ex = blocking(move || {
        promptkit::list_examples(&ctx.store, &doc_id)?
            .into_iter()
            .find(|e| e.example_id == example_id)
            .ok_or_else(|| ApiError::not_found(format!("example '{example_id}' not found")))
    })
    .await?;
    Ok(Json(ex).into_response())
}

async fn delete_example(
    State(ctx): State<AppState>,
    Path((doc_id, example_id)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let id = example_id.clone();
    blocking(move || Ok(promptkit::delete_example(&ctx.store, &doc_id, &id)?)).await?;
    Ok(deleted(&example_id))
}

async fn generate(State(ctx): State<AppState>, Body(req): Body<GenerateRequest>) -> ApiResult<Response> {
    let run_id = ops::start_run(&ctx, req)?;
    Ok(accepted(json!({ "run_id": run_id })))
}

async fn run_status(State(ctx): State<AppState>, Path(run_id): Path<String>) -> ApiResult<Response> {
    Ok(Json(ops::run_status(&ctx, &run_id)?).into_response())
}

async fn list_datasets(State(ctx): State<AppState>) -> ApiResult<Response> {
    let list = blocking(move || {
        let all: Vec<DatasetRecord> = ctx.store.list()?;
        Ok(all.iter().map(DatasetSummary::from).collect::<Vec<_>>())
    })
    .await?;
    Ok(Json(list).into_response())
}

async fn get_dataset(State(ctx): State<AppState>, Path(dataset_id): Path<String>) -> ApiResult<Response> {
    let ds = blocking(move || ops::dataset(&ctx.store, &dataset_id)).await?;
    Ok(Json(ds).into_response())
}

async fn list_pairs(
    State(ctx): State<AppState>,
    Path(dataset_id): Path<String>,
    Query(query): Query<PairsQuery>,
) -> ApiResult<Response> {
    let pairs = blocking(move || ops::pairs(&ctx.store, &dataset_id, &query)).await?;
    Ok(Json(pairs).into_response())
}

async fn export_dataset(
    State(ctx): State<AppState>,
    Path(dataset_id): Path<String>,
    Body(spec): Body<SplitSpec>,
) -> ApiResult<Response> {
    let result = blocking(move || ops::export(&ctx.store, &dataset_id, &spec)).await?;
    Ok(created(result))
}

async fn pair_attribution(State(ctx): State<AppState>, Path(pair_id): Path<String>) -> ApiResult<Response> {
    let view = blocking(move || ops::pair_attribution(&ctx.store, &pair_id)).await?;
    Ok(Json(view).into_response())
}

async fn register_provider(State(ctx): State<AppState>, Body(cfg): Body<ProviderConfig>) -> ApiResult<Response> {
    ctx.gateway.register_provider(cfg.clone())?;
    Ok(created(cfg))
}

async fn list_providers(State(ctx): State<AppState>) -> Json<Vec<ProviderConfig>> {
    Json(ctx.gateway.list_providers())
}

async fn train(State(ctx): State<AppState>, Body(req): Body<TrainRequest>) -> ApiResult<Response> {
    let job = blocking(move || ops::train(&ctx, &req)).await?;
    Ok(accepted(json!({ "job_id": job.job_id, "state": job.state })))
}

async fn list_jobs(State(ctx): State<AppState>) -> ApiResult<Json<Vec<TrainingJob>>> {
    Ok(Json(blocking(move || Ok(ctx.jobs.list()?)).await?))
}

async fn job_status(State(ctx): State<AppState>, Path(job_id): Path<String>) -> ApiResult<Json<TrainingJob>> {
    Ok(Json(blocking(move || Ok(ctx.jobs.status(&job_id)?)).await?))
}

async fn cancel_job(State(ctx): State<AppState>, Path(job_id): Path<String>) -> ApiResult<Json<TrainingJob>> {
    Ok(Json(blocking(move || Ok(ctx.jobs.cancel(&job_id)?)).await?))
}

async fn compare(State(ctx): State<AppState>, Body(req): Body<CompareRequest>) -> ApiResult<Response> {
    let record = ops::compare(&ctx, &req).await?;
    Ok(created(record))
}

async fn list_comparisons(State(ctx): State<AppState>) -> ApiResult<Response> {
    let list = blocking(move || Ok(explorer::list_comparisons(&ctx.store)?)).await?;
    Ok(Json(list).into_response())
}

//! Operations shared by the HTTP handlers and the CLI.
//!
//! Both front ends deserialize or assemble the request types below and call
//! these functions, so identical inputs produce identical persisted records.

use crate::error::ApiError;
use qgen_core::attribution::{Attribution, Highlight};
use qgen_core::corpus::{self, Document, DocumentGroup, SourceKind};
use qgen_core::datastore::{export_training, DatasetRecord, ExportResult, QAPair, SplitSpec, Store};
use qgen_core::explorer::{self, CompareOptions, ComparisonRecord, ModelRef};
use qgen_core::llm_gateway::Gateway;
use qgen_core::metrics::{filter_sort, MetricFilter};
use qgen_core::promptkit::{self, generate_for_group, GenerationConfig, RunProgress, RunSnapshot, RunState};
use qgen_core::text::char_slice;
use qgen_core::trainjobs::{JobSupervisor, TrainingJob, TrainingParams};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use tokio::sync::Semaphore;
use tracing::info;

#[derive(Debug, Clone, Deserialize)]
pub struct CreateGroup {
    pub name: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct IngestDocument {
    pub title: String,
    pub source_kind: SourceKind,
    /// Raw document payload as text.
    pub content: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct NewExample {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GenerateRequest {
    pub group_id: String,
    #[serde(flatten)]
    pub config: GenerationConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PairsQuery {
    pub filter: Option<String>,
    pub sort: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TrainRequest {
    /// Export id under the workspace's exports directory.
    #[serde(default)]
    pub export_id: Option<String>,
    /// Or an explicit export directory.
    #[serde(default)]
    pub export_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub params: TrainingParams,
    /// Overrides the server's configured trainer command template.
    #[serde(default)]
    pub command_template: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompareRequest {
    pub doc_id: String,
    pub question: String,
    pub model_a: ModelRef,
    pub model_b: ModelRef,
    #[serde(default)]
    pub opts: CompareOptions,
}

/// A pair together with the chunk text its spans refer to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionView {
    pub pair_id: String,
    pub dataset_id: String,
    pub chunk_id: String,
    pub chunk_text: String,
    pub question: String,
    pub answer: String,
    pub attribution: Attribution,
    pub sentence_text: String,
    pub highlights: Vec<Highlight>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunView {
    pub run_id: String,
    #[serde(flatten)]
    pub snapshot: RunSnapshot,
}

/// Long-lived state behind the API: the workspace, registered providers,
/// in-flight generation runs and the training job supervisor.
pub struct Context {
    pub store: Arc<Store>,
    pub gateway: Arc<Gateway>,
    pub jobs: Arc<JobSupervisor>,
    pub train_cmd: Option<String>,
    runs: Mutex<HashMap<String, Arc<RunProgress>>>,
    run_counter: AtomicU64,
    run_slots: Arc<Semaphore>,
}

/// Generation runs allowed to execute at the same time.
pub const MAX_CONCURRENT_RUNS: usize = 2;
/// Training jobs allowed to execute at the same time.
pub const MAX_CONCURRENT_JOBS: usize = 1;

impl Context {
    pub fn new(store: Store, gateway: Gateway, train_cmd: Option<String>) -> Result<Self, ApiError> {
        let store = Arc::new(store);
        let jobs = JobSupervisor::new(store.clone(), MAX_CONCURRENT_JOBS)?;
        Ok(Context {
            store,
            gateway: Arc::new(gateway),
            jobs: Arc::new(jobs),
            train_cmd,
            runs: Mutex::new(HashMap::new()),
            run_counter: AtomicU64::new(0),
            run_slots: Arc::new(Semaphore::new(MAX_CONCURRENT_RUNS)),
        })
    }

    pub fn workspace(&self) -> &Path {
        self.store.root()
    }
}

pub fn create_group(store: &Store, req: &CreateGroup) -> Result<DocumentGroup, ApiError> {
    Ok(corpus::create_group(store, &req.name)?)
}

/// Resolve a group by id, falling back to its name.
pub fn resolve_group(store: &Store, id_or_name: &str) -> Result<DocumentGroup, ApiError> {
    corpus::find_group(store, id_or_name)?
        .ok_or_else(|| ApiError::not_found(format!("group '{id_or_name}' not found")))
}

pub fn ingest(store: &Store, group_id: &str, req: &IngestDocument) -> Result<Document, ApiError> {
    Ok(corpus::ingest_document(
        store,
        group_id,
        &req.title,
        req.source_kind,
        req.content.as_bytes(),
    )?)
}

/// Document text exactly as every span refers to it.
pub fn document_text(store: &Store, doc_id: &str) -> Result<serde_json::Value, ApiError> {
    let text = corpus::canonical_text(store, doc_id)?;
    Ok(serde_json::json!({"doc_id": doc_id, "text": text}))
}

pub fn group_document(store: &Store, group_id: &str, doc_id: &str) -> Result<Document, ApiError> {
    let doc = corpus::get_document(store, doc_id)?;
    if doc.group_id != group_id {
        return Err(ApiError::not_found(format!("document '{doc_id}' not found in group '{group_id}'")));
    }
    Ok(doc)
}

/// Run a generation to completion (CLI path).
pub async fn generate(ctx: &Context, req: &GenerateRequest) -> Result<DatasetRecord, ApiError> {
    Ok(generate_for_group(&ctx.store, &ctx.gateway, &req.group_id, &req.config, None).await?)
}

/// Validate a generation request and start it in the background (HTTP path).
pub fn start_run(ctx: &Arc<Context>, req: GenerateRequest) -> Result<String, ApiError> {
    promptkit::preflight(&ctx.store, &ctx.gateway, &req.group_id, &req.config)?;
    let run_id = format!("run-{}", ctx.run_counter.fetch_add(1, Ordering::SeqCst) + 1);
    let progress = Arc::new(RunProgress::default());
    ctx.runs
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(run_id.clone(), progress.clone());
    let ctx = ctx.clone();
    let id = run_id.clone();
    tokio::spawn(async move {
        let _slot = ctx.run_slots.clone().acquire_owned().await;
        info!(run = %id, group = %req.group_id, "generation run starting");
        let result = generate_for_group(&ctx.store, &ctx.gateway, &req.group_id, &req.config, Some(&progress)).await;
        progress.finish(&result);
    });
    Ok(run_id)
}

pub fn run_status(ctx: &Context, run_id: &str) -> Result<RunView, ApiError> {
    let runs = ctx.runs.lock().unwrap_or_else(|p| p.into_inner());
    let progress = runs
        .get(run_id)
        .ok_or_else(|| ApiError::not_found(format!("run '{run_id}' not found")))?;
    Ok(RunView {
        run_id: run_id.to_string(),
        snapshot: progress.snapshot(),
    })
}

/// True when a run has reached a terminal state.
pub fn run_finished(view: &RunView) -> bool {
    matches!(view.snapshot.state, RunState::Completed | RunState::Failed)
}

pub fn dataset(store: &Store, dataset_id: &str) -> Result<DatasetRecord, ApiError> {
    Ok(store.load(dataset_id)?)
}

pub fn pairs(store: &Store, dataset_id: &str, query: &PairsQuery) -> Result<Vec<QAPair>, ApiError> {
    let filter = MetricFilter::parse(query.filter.as_deref(), query.sort.as_deref())?;
    let ds = dataset(store, dataset_id)?;
    Ok(filter_sort(ds.pairs, &filter))
}

pub fn pair_attribution(store: &Store, pair_id: &str) -> Result<AttributionView, ApiError> {
    let not_found = || ApiError::not_found(format!("pair '{pair_id}' not found"));
    let (dataset_id, _) = pair_id.rsplit_once("-p").ok_or_else(not_found)?;
    let ds: DatasetRecord = store.try_load(dataset_id)?.ok_or_else(not_found)?;
    let pair = ds.pair(pair_id).ok_or_else(not_found)?;
    let chunk = ds
        .chunk(&pair.chunk_id)
        .ok_or_else(|| ApiError::internal(format!("chunk '{}' missing from dataset snapshot", pair.chunk_id)))?;
    Ok(AttributionView {
        pair_id: pair.pair_id.clone(),
        dataset_id: ds.dataset_id.clone(),
        chunk_id: chunk.chunk_id.clone(),
        chunk_text: chunk.text.clone(),
        question: pair.question.clone(),
        answer: pair.answer.clone(),
        attribution: pair.attribution.clone(),
        sentence_text: char_slice(&chunk.text, pair.attribution.sentence_span).to_string(),
        highlights: pair.highlights.clone(),
    })
}

pub fn export(store: &Store, dataset_id: &str, spec: &SplitSpec) -> Result<ExportResult, ApiError> {
    Ok(export_training(store, dataset_id, spec)?)
}

fn export_location(store: &Store, req: &TrainRequest) -> Result<PathBuf, ApiError> {
    match (&req.export_id, &req.export_dir) {
        (Some(id), None) => {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(ApiError::validation(format!("invalid export id '{id}'")));
            }
            Ok(store.exports_dir().join(id))
        }
        (None, Some(dir)) => Ok(dir.clone()),
        _ => Err(ApiError::validation("give exactly one of export_id or export_dir")),
    }
}

pub fn train(ctx: &Context, req: &TrainRequest) -> Result<TrainingJob, ApiError> {
    let template = req
        .command_template
        .as_deref()
        .or(ctx.train_cmd.as_deref())
        .ok_or_else(|| ApiError::validation("no trainer command template configured (set --train-cmd)"))?;
    let export_dir = export_location(&ctx.store, req)?;
    Ok(ctx.jobs.launch(&export_dir, req.params.clone(), template)?)
}

pub async fn compare(ctx: &Context, req: &CompareRequest) -> Result<ComparisonRecord, ApiError> {
    Ok(explorer::compare(
        &ctx.store,
        &ctx.gateway,
        &req.doc_id,
        &req.question,
        &req.model_a,
        &req.model_b,
        &req.opts,
    )
    .await?)
}

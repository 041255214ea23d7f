//! One generation run over a document group.

use super::{build_prompt, parse_response, ExamplePair, GenerationConfig, PromptError, PromptMode, PROMPT_TEMPLATE_VERSION};
use crate::attribution::{best_sentence, highlight_spans};
use crate::chunker::{chunk_document, Chunk};
use crate::corpus::{self, CorpusError, Document};
use crate::datastore::{DatasetRecord, FailureKind, GenerationFailure, QAPair, Store, StoreError};
use crate::ids::short_hash;
use crate::llm_gateway::{Gateway, GatewayError};
use crate::metrics::{score_pair, CorpusStats};
use chrono::Utc;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;
use tracing::{info, warn};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("group '{0}' not found")]
    GroupNotFound(String),
    #[error("group '{0}' has no documents")]
    EmptyGroup(String),
    #[error(transparent)]
    Provider(GatewayError),
    #[error("few-shot generation needs example pairs for document '{0}'")]
    NoExamples(String),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("all {0} chunks failed")]
    AllChunksFailed(usize),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Corpus(CorpusError),
}

impl From<CorpusError> for GenerateError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::GroupNotFound(id) => GenerateError::GroupNotFound(id),
            CorpusError::Store(s) => GenerateError::Store(s),
            other => GenerateError::Corpus(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    Running,
    Completed,
    Failed,
}

/// Point-in-time view of a run, as served to pollers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub state: RunState,
    pub done: usize,
    pub failed: usize,
    pub total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Live counters of a generation run.
#[derive(Debug)]
pub struct RunProgress {
    total: AtomicUsize,
    done: AtomicUsize,
    failed: AtomicUsize,
    outcome: Mutex<(RunState, Option<String>, Option<String>)>,
}

impl Default for RunProgress {
    fn default() -> Self {
        RunProgress {
            total: AtomicUsize::new(0),
            done: AtomicUsize::new(0),
            failed: AtomicUsize::new(0),
            outcome: Mutex::new((RunState::Pending, None, None)),
        }
    }
}

impl RunProgress {
    pub fn snapshot(&self) -> RunSnapshot {
        let outcome = self.outcome.lock().unwrap_or_else(|p| p.into_inner());
        RunSnapshot {
            state: outcome.0,
            done: self.done.load(Ordering::SeqCst),
            failed: self.failed.load(Ordering::SeqCst),
            total: self.total.load(Ordering::SeqCst),
            dataset_id: outcome.1.clone(),
            error: outcome.2.clone(),
        }
    }

    fn set_state(&self, state: RunState, dataset_id: Option<String>, error: Option<String>) {
        *self.outcome.lock().unwrap_or_else(|p| p.into_inner()) = (state, dataset_id, error);
    }

    /// Mark the run finished with the given result.
    pub fn finish(&self, result: &Result<DatasetRecord, GenerateError>) {
        match result {
            Ok(ds) => self.set_state(RunState::Completed, Some(ds.dataset_id.clone()), None),
            Err(e) => self.set_state(RunState::Failed, None, Some(e.to_string())),
        }
    }
}

enum ChunkOutcome {
    Pairs {
        pairs: Vec<ScoredPair>,
        dropped: usize,
    },
    Failed(GenerationFailure, usize),
}

struct ScoredPair {
    ordinal: usize,
    question: String,
    answer: String,
    report: crate::metrics::MetricReport,
    attribution: crate::attribution::Attribution,
    highlights: Vec<crate::attribution::Highlight>,
}

fn failure(chunk: &Chunk, kind: FailureKind, code: &str, message: String) -> GenerationFailure {
    GenerationFailure {
        chunk_id: chunk.chunk_id.clone(),
        kind,
        code: code.to_string(),
        message,
    }
}

async fn run_chunk(
    gateway: &Gateway,
    cfg: &GenerationConfig,
    chunk: &Chunk,
    examples: &[ExamplePair],
    stats: &CorpusStats,
) -> ChunkOutcome {
    let request = match build_prompt(chunk, cfg, examples) {
        Ok(r) => r,
        Err(e) => return ChunkOutcome::Failed(failure(chunk, FailureKind::Unparseable, "prompt_error", e.to_string()), 0),
    };
    let response = match gateway.chat(&cfg.provider_id, &request).await {
        Ok(r) => r,
        Err(e) => return ChunkOutcome::Failed(failure(chunk, FailureKind::Upstream, e.code(), e.to_string()), 0),
    };
    let parsed = match parse_response(&response.text) {
        Ok(p) => p,
        Err(e) => {
            return ChunkOutcome::Failed(failure(chunk, FailureKind::Unparseable, "unparseable_response", e.to_string()), 0)
        }
    };
    let mut dropped = parsed.dropped;
    let mut pairs = Vec::new();
    for (ordinal, raw) in parsed.pairs.into_iter().enumerate() {
        if ordinal >= cfg.questions_per_chunk {
            dropped += 1;
            continue;
        }
        let report = match score_pair(&raw, &chunk.text, stats, &cfg.metrics) {
            Ok(r) => r,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let Ok(attribution) = best_sentence(&chunk.text, &raw.question, &raw.answer) else {
            dropped += 1;
            continue;
        };
        pairs.push(ScoredPair {
            ordinal,
            highlights: highlight_spans(&chunk.text, &raw.question, &raw.answer),
            question: raw.question,
            answer: raw.answer,
            report,
            attribution,
        });
    }
    if pairs.is_empty() {
        return ChunkOutcome::Failed(
            failure(chunk, FailureKind::Unparseable, "no_scorable_pairs", format!("{dropped} pairs dropped")),
            dropped,
        );
    }
    ChunkOutcome::Pairs { pairs, dropped }
}

/// Everything a run needs, loaded and validated before any provider call.
struct Prepared {
    documents: Vec<Document>,
    examples: Vec<ExamplePair>,
    max_concurrency: usize,
}

fn prepare(
    store: &Store,
    gateway: &Gateway,
    group_id: &str,
    cfg: &GenerationConfig,
) -> Result<Prepared, GenerateError> {
    cfg.validate().map_err(|e| match e {
        PromptError::InvalidConfig(m) => GenerateError::InvalidConfig(m),
        other => GenerateError::InvalidConfig(other.to_string()),
    })?;
    let group = corpus::get_group(store, group_id)?;
    if group.document_ids.is_empty() {
        return Err(GenerateError::EmptyGroup(group_id.to_string()));
    }
    let provider = gateway.provider(&cfg.provider_id).map_err(GenerateError::Provider)?;
    let documents: Vec<Document> = group
        .document_ids
        .iter()
        .map(|id| corpus::get_document(store, id))
        .collect::<Result<_, _>>()?;

    let examples: Vec<ExamplePair> = if cfg.prompt_mode == PromptMode::FewShot {
        let all: Vec<ExamplePair> = store.list()?;
        if let Some(doc) = documents.iter().find(|d| !all.iter().any(|e| e.doc_id == d.doc_id)) {
            return Err(GenerateError::NoExamples(doc.doc_id.clone()));
        }
        all
    } else {
        Vec::new()
    };

    Ok(Prepared {
        documents,
        examples,
        max_concurrency: provider.max_concurrency,
    })
}

/// Check that a run would start: valid config, non-empty group, known
/// provider and, for few-shot runs, examples for every document.
pub fn preflight(
    store: &Store,
    gateway: &Gateway,
    group_id: &str,
    cfg: &GenerationConfig,
) -> Result<(), GenerateError> {
    prepare(store, gateway, group_id, cfg).map(|_| ())
}

/// Generate, score, attribute and persist QA pairs for every chunk of a group.
///
/// One chat request is made per chunk. A failing chunk is recorded as a
/// [`GenerationFailure`] and never aborts the run; the run fails only when
/// no pair at all was produced.
pub async fn generate_for_group(
    store: &Store,
    gateway: &Gateway,
    group_id: &str,
    cfg: &GenerationConfig,
    progress: Option<&RunProgress>,
) -> Result<DatasetRecord, GenerateError> {
    let Prepared {
        documents,
        examples,
        max_concurrency,
    } = prepare(store, gateway, group_id, cfg)?;
    let chunks: Vec<Chunk> = documents
        .iter()
        .flat_map(|d| chunk_document(d, &cfg.chunk_config))
        .collect();
    let stats = CorpusStats::from_texts(chunks.iter().map(|c| c.text.as_str()));
    if let Some(p) = progress {
        p.total.store(chunks.len(), Ordering::SeqCst);
        p.set_state(RunState::Running, None, None);
    }
    info!(group = group_id, chunks = chunks.len(), provider = %cfg.provider_id, "generation run started");

    // Build the futures eagerly: a lazily mapped stream of borrowing closures
    // makes the whole run future fail the `Send` check required by spawners.
    let pending: Vec<_> = chunks
        .iter()
        .map(|chunk| {
            let (examples, stats) = (&examples, &stats);
            async move {
                let outcome = run_chunk(gateway, cfg, chunk, examples, stats).await;
                if let Some(p) = progress {
                    p.done.fetch_add(1, Ordering::SeqCst);
                    if matches!(outcome, ChunkOutcome::Failed(..)) {
                        p.failed.fetch_add(1, Ordering::SeqCst);
                    }
                }
                outcome
            }
        })
        .collect();
    let outcomes: Vec<ChunkOutcome> = stream::iter(pending)
        .buffered(max_concurrency)
        .collect()
        .await;

    let mut failures = Vec::new();
    let mut dropped_total = 0;
    let mut scored: Vec<(&Chunk, ScoredPair)> = Vec::new();
    for (chunk, outcome) in chunks.iter().zip(outcomes) {
        match outcome {
            ChunkOutcome::Pairs { pairs, dropped } => {
                dropped_total += dropped;
                scored.extend(pairs.into_iter().map(|p| (chunk, p)));
            }
            ChunkOutcome::Failed(f, dropped) => {
                warn!(chunk = %f.chunk_id, code = %f.code, "chunk generation failed");
                dropped_total += dropped;
                failures.push(f);
            }
        }
    }
    if scored.is_empty() {
        return Err(GenerateError::AllChunksFailed(chunks.len()));
    }

    let dataset = store.write(|w| -> Result<DatasetRecord, GenerateError> {
        let counter = w.next_counter()?;
        let dataset_id = short_hash(&[group_id, &counter.to_string()]);
        let created_at = Utc::now();
        let pairs = scored
            .into_iter()
            .enumerate()
            .map(|(i, (chunk, p))| QAPair {
                pair_id: format!("{dataset_id}-p{i}"),
                dataset_id: dataset_id.clone(),
                doc_id: chunk.doc_id.clone(),
                chunk_id: chunk.chunk_id.clone(),
                ordinal: p.ordinal,
                question: p.question,
                answer: p.answer,
                metric_report: p.report,
                attribution: p.attribution,
                highlights: p.highlights,
                created_at,
            })
            .collect();
        let dataset = DatasetRecord {
            dataset_id,
            group_id: group_id.to_string(),
            config_snapshot: cfg.clone(),
            chunk_snapshot: chunks.clone(),
            corpus_stats: stats.clone(),
            pairs,
            failures,
            dropped_pairs: dropped_total,
            orphaned: false,
            prompt_template_version: PROMPT_TEMPLATE_VERSION.to_string(),
            created_at,
        };
        w.save(&dataset)?;
        Ok(dataset)
    })?;
    info!(dataset = %dataset.dataset_id, pairs = dataset.pairs.len(), failures = dataset.failures.len(), "generation run finished");
    Ok(dataset)
}

//! Side-by-side comparison of two models on one document.

use crate::attribution::best_sentence;
use crate::chunker::{chunk_document, ChunkConfig};
use crate::corpus::{self, CorpusError, Document};
use crate::datastore::{Record, Store, StoreError};
use crate::ids::short_hash;
use crate::llm_gateway::{ChatRequest, Gateway, GatewayError, Message};
use crate::metrics::{score_pair, CorpusStats, MetricName, MetricReport};
use crate::promptkit::RawQAPair;
use crate::text::{char_slice, tokenize_ws, Span};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_CONTEXT_TOKENS: usize = 2000;

const SYSTEM_PROMPT: &str = "Answer the question using only the provided document. \
If the document does not contain the answer, say so.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub provider_id: String,
    /// Free-form label for a fine-tuned adapter served behind the provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
}

impl ModelRef {
    pub fn new(provider_id: impl Into<String>) -> Self {
        ModelRef {
            provider_id: provider_id.into(),
            adapter: None,
        }
    }
}

fn default_context_tokens() -> usize {
    DEFAULT_CONTEXT_TOKENS
}
fn default_max_output() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    /// Score each answer against the document's best-matching chunk.
    #[serde(default)]
    pub score: bool,
    #[serde(default = "default_context_tokens")]
    pub context_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u32,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            score: false,
            context_tokens: DEFAULT_CONTEXT_TOKENS,
            temperature: 0.0,
            max_output_tokens: default_max_output(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ModelAnswer {
    Ok { text: String },
    Error { code: String, message: String },
}

impl ModelAnswer {
    pub fn text(&self) -> Option<&str> {
        match self {
            ModelAnswer::Ok { text } => Some(text),
            ModelAnswer::Error { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub comparison_id: String,
    pub doc_id: String,
    pub question: String,
    pub model_a: ModelRef,
    pub model_b: ModelRef,
    pub answer_a: ModelAnswer,
    pub answer_b: ModelAnswer,
    pub latency_a: u64,
    pub latency_b: u64,
    pub context_truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_report_a: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_report_b: Option<MetricReport>,
    pub created_at: DateTime<Utc>,
}

impl Record for ComparisonRecord {
    const KIND: &'static str = "comparisons";
    fn record_id(&self) -> &str {
        &self.comparison_id
    }
}

#[derive(Debug, Error)]
pub enum ExplorerError {
    #[error("document '{0}' not found")]
    DocNotFound(String),
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error(transparent)]
    Provider(GatewayError),
    #[error("both models failed: {0}; {1}")]
    BothModelsFailed(String, String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<CorpusError> for ExplorerError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::NotFound(id) => ExplorerError::DocNotFound(id),
            CorpusError::Store(s) => ExplorerError::Store(s),
            other => ExplorerError::DocNotFound(other.to_string()),
        }
    }
}

/// The first `max_tokens` whitespace tokens of `text`, and whether anything was cut.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> (&str, bool) {
    let tokens = tokenize_ws(text);
    if tokens.len() <= max_tokens {
        return (text, false);
    }
    let end = if max_tokens == 0 { 0 } else { tokens[max_tokens - 1].span.1 };
    (char_slice(text, Span(0, end)), true)
}

pub fn answer_prompt(document_text: &str, question: &str, opts: &CompareOptions) -> (ChatRequest, bool) {
    let (context, truncated) = truncate_tokens(document_text, opts.context_tokens);
    let user = format!("Document:\n\"\"\"\n{context}\n\"\"\"\n\nQuestion: {}", question.trim());
    (
        ChatRequest {
            messages: vec![Message::system(SYSTEM_PROMPT), Message::user(user)],
            temperature: opts.temperature,
            max_output_tokens: opts.max_output_tokens,
        },
        truncated,
    )
}

/// Score an answer against the chunk whose best sentence matches it most.
fn score_answer(doc: &Document, question: &str, answer: &str) -> Option<MetricReport> {
    let chunks = chunk_document(doc, &ChunkConfig::default());
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in chunks.iter().enumerate() {
        if let Ok(att) = best_sentence(&c.text, question, answer) {
            if best.is_none_or(|(s, _)| att.score > s) {
                best = Some((att.score, i));
            }
        }
    }
    let (_, idx) = best?;
    let stats = CorpusStats::from_texts(chunks.iter().map(|c| c.text.as_str()));
    let metrics = MetricName::ALL.into_iter().collect();
    let pair = RawQAPair {
        question: question.to_string(),
        answer: answer.to_string(),
    };
    score_pair(&pair, &chunks[idx].text, &stats, &metrics).ok()
}

async fn ask(gateway: &Gateway, model: &ModelRef, req: &ChatRequest) -> (ModelAnswer, u64) {
    let started = Instant::now();
    let answer = match gateway.chat(&model.provider_id, req).await {
        Ok(resp) => ModelAnswer::Ok { text: resp.text },
        Err(e) => ModelAnswer::Error {
            code: e.code().to_string(),
            message: e.to_string(),
        },
    };
    (answer, started.elapsed().as_millis() as u64)
}

/// Ask two models the same question about a document and persist the result.
///
/// The two provider calls run concurrently; one failing does not fail the other.
pub async fn compare(
    store: &Store,
    gateway: &Gateway,
    doc_id: &str,
    question: &str,
    model_a: &ModelRef,
    model_b: &ModelRef,
    opts: &CompareOptions,
) -> Result<ComparisonRecord, ExplorerError> {
    if question.trim().is_empty() {
        return Err(ExplorerError::EmptyQuestion);
    }
    let doc = corpus::get_document(store, doc_id)?;
    for m in [model_a, model_b] {
        gateway.provider(&m.provider_id).map_err(ExplorerError::Provider)?;
    }
    let (request, truncated) = answer_prompt(&doc.canonical_text(), question, opts);
    let ((answer_a, latency_a), (answer_b, latency_b)) =
        tokio::join!(ask(gateway, model_a, &request), ask(gateway, model_b, &request));
    if let (ModelAnswer::Error { message: ea, .. }, ModelAnswer::Error { message: eb, .. }) =
        (&answer_a, &answer_b)
    {
        return Err(ExplorerError::BothModelsFailed(ea.clone(), eb.clone()));
    }
    let scorer = |a: &ModelAnswer| {
        if opts.score {
            a.text().and_then(|t| score_answer(&doc, question, t))
        } else {
            None
        }
    };
    let (metric_report_a, metric_report_b) = (scorer(&answer_a), scorer(&answer_b));

    store.write(|w| -> Result<ComparisonRecord, ExplorerError> {
        let counter = w.next_counter()?;
        let record = ComparisonRecord {
            comparison_id: short_hash(&[doc_id, question, &counter.to_string()]),
            doc_id: doc_id.to_string(),
            question: question.trim().to_string(),
            model_a: model_a.clone(),
            model_b: model_b.clone(),
            answer_a,
            answer_b,
            latency_a,
            latency_b,
            context_truncated: truncated,
            metric_report_a,
            metric_report_b,
            created_at: Utc::now(),
        };
        w.save(&record)?;
        Ok(record)
    })
}

pub fn list_comparisons(store: &Store) -> Result<Vec<ComparisonRecord>, ExplorerError> {
    Ok(store.list()?)
}

use super::Record;
use crate::attribution::{Attribution, Highlight};
use crate::chunker::Chunk;
use crate::metrics::{CorpusStats, HasMetrics, MetricReport};
use crate::promptkit::GenerationConfig;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// A generated, scored and attributed question-answer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub pair_id: String,
    pub dataset_id: String,
    pub doc_id: String,
    pub chunk_id: String,
    /// Position of the pair within its chunk's model response.
    pub ordinal: usize,
    pub question: String,
    pub answer: String,
    pub metric_report: MetricReport,
    pub attribution: Attribution,
    pub highlights: Vec<Highlight>,
    pub created_at: DateTime<Utc>,
}

impl HasMetrics for QAPair {
    fn metric_report(&self) -> &MetricReport {
        &self.metric_report
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// The provider call failed.
    Upstream,
    /// The response contained no usable pairs.
    Unparseable,
}

/// A chunk whose generation produced no pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub chunk_id: String,
    pub kind: FailureKind,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: String,
    pub group_id: String,
    pub config_snapshot: GenerationConfig,
    pub chunk_snapshot: Vec<Chunk>,
    pub corpus_stats: CorpusStats,
    pub pairs: Vec<QAPair>,
    pub failures: Vec<GenerationFailure>,
    /// Pairs dropped because they were empty or could not be scored.
    #[serde(default)]
    pub dropped_pairs: usize,
    pub orphaned: bool,
    pub prompt_template_version: String,
    pub created_at: DateTime<Utc>,
}

impl Record for DatasetRecord {
    const KIND: &'static str = "datasets";
    fn record_id(&self) -> &str {
        &self.dataset_id
    }
}

impl DatasetRecord {
    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunk_snapshot.iter().find(|c| c.chunk_id == chunk_id)
    }

    pub fn pair(&self, pair_id: &str) -> Option<&QAPair> {
        self.pairs.iter().find(|p| p.pair_id == pair_id)
    }

    /// Every pair resolves to a snapshot chunk and idf statistics cover the snapshot.
    pub fn is_consistent(&self) -> bool {
        self.corpus_stats.num_docs == self.chunk_snapshot.len()
            && self.pairs.iter().all(|p| self.chunk(&p.chunk_id).is_some())
    }
}

/// Lightweight listing entry for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub group_id: String,
    pub pairs: usize,
    pub failures: usize,
    pub orphaned: bool,
    pub created_at: DateTime<Utc>,
}

impl From<&DatasetRecord> for DatasetSummary {
    fn from(d: &DatasetRecord) -> Self {
        DatasetSummary {
            dataset_id: d.dataset_id.clone(),
            group_id: d.group_id.clone(),
            pairs: d.pairs.len(),
            failures: d.failures.len(),
            orphaned: d.orphaned,
            created_at: d.created_at,
        }
    }
}

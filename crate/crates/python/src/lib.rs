//! Python bindings for `qgen_core`.
//!
//! Results cross the boundary as plain Python values (dicts, lists, floats)
//! produced from the same JSON the workspace stores on disk.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use qgen_core::attribution;
use qgen_core::chunker::{chunk_document, ChunkConfig};
use qgen_core::corpus::{self, SourceKind};
use qgen_core::datastore::{export_training, DatasetRecord, SplitSpec, Store};
use qgen_core::llm_gateway::{Gateway, ProviderConfig};
use qgen_core::metrics::{self, filter_sort, MetricFilter};
use qgen_core::promptkit::{self, GenerationConfig};
use qgen_core::text;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use std::fmt::Display;

create_exception!(qgen, QgenError, PyException, "Raised for any failed qgen operation.");

fn err(e: impl Display) -> PyErr {
    QgenError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// BLEU-n (1 to 4) of `candidate` against `reference`.
#[pyfunction]
fn bleu(candidate: &str, reference: &str, n: usize) -> PyResult<f64> {
    metrics::bleu_n(candidate, reference, n).map_err(err)
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F-scores as a dict.
#[pyfunction]
fn rouge(py: Python<'_>, candidate: &str, reference: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &metrics::rouge(candidate, reference).map_err(err)?)
}

#[pyfunction]
fn meteor(candidate: &str, reference: &str) -> PyResult<f64> {
    metrics::meteor_simple(candidate, reference).map_err(err)
}

/// TF-IDF cosine with idf taken from `corpus`.
#[pyfunction]
fn tfidf_cosine(candidate: &str, reference: &str, corpus: Vec<String>) -> PyResult<f64> {
    let docs: Vec<&str> = corpus.iter().map(String::as_str).collect();
    metrics::tfidf_cosine(candidate, reference, &docs).map_err(err)
}

#[pyfunction]
fn count_cosine(candidate: &str, reference: &str) -> PyResult<f64> {
    metrics::count_cosine(candidate, reference).map_err(err)
}

/// Normalized tokens as used by every metric.
#[pyfunction]
fn tokenize(text_in: &str) -> Vec<String> {
    text::normalized_tokens(text_in)
}

/// Sentences as `{"text", "span"}` dicts with character offsets.
#[pyfunction]
fn split_sentences(py: Python<'_>, text_in: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &attribution::split_sentences(text_in))
}

#[pyfunction]
fn highlight_spans(py: Python<'_>, chunk_text: &str, question: &str, answer: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &attribution::highlight_spans(chunk_text, question, answer))
}

#[pyfunction]
fn best_sentence(py: Python<'_>, chunk_text: &str, question: &str, answer: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &attribution::best_sentence(chunk_text, question, answer).map_err(err)?)
}

/// Extract QA pairs from a model response.
#[pyfunction]
fn parse_response(py: Python<'_>, response: &str) -> PyResult<Py<PyAny>> {
    let parsed = promptkit::parse_response(response).map_err(err)?;
    to_py(py, &json!({"pairs": parsed.pairs, "dropped": parsed.dropped}))
}

/// A workspace directory holding groups, documents, datasets and exports.
#[pyclass(frozen)]
struct Workspace {
    store: Store,
    gateway: Gateway,
}

#[pymethods]
impl Workspace {
    #[new]
    fn new(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Workspace {
            store: Store::open(path).map_err(err)?,
            gateway: Gateway::new(),
        })
    }

    #[getter]
    fn path(&self) -> std::path::PathBuf {
        self.store.root().to_path_buf()
    }

    /// Register an LLM provider from a dict in the HTTP API's shape.
    fn add_provider(&self, py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<()> {
        let cfg: ProviderConfig = from_py(py, config)?;
        self.gateway.register_provider(cfg).map_err(err)
    }

    fn create_group(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &corpus::create_group(&self.store, name).map_err(err)?)
    }

    fn groups(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &corpus::list_groups(&self.store).map_err(err)?)
    }

    /// Parse `content` as `source_kind` ("markdown", "plain-text" or "structured-json").
    #[pyo3(signature = (group_id, title, content, source_kind = "markdown"))]
    fn ingest(&self, py: Python<'_>, group_id: &str, title: &str, content: &str, source_kind: &str) -> PyResult<Py<PyAny>> {
        let kind: SourceKind = serde_json::from_value(json!(source_kind)).map_err(err)?;
        to_py(py, &corpus::ingest_document(&self.store, group_id, title, kind, content.as_bytes()).map_err(err)?)
    }

    fn documents(&self, py: Python<'_>, group_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &corpus::list_documents(&self.store, group_id).map_err(err)?)
    }

    fn document_text(&self, doc_id: &str) -> PyResult<String> {
        corpus::canonical_text(&self.store, doc_id).map_err(err)
    }

    #[pyo3(signature = (doc_id, max_tokens = 300, overlap = 30, include_headings = true))]
    fn chunks(&self, py: Python<'_>, doc_id: &str, max_tokens: usize, overlap: usize, include_headings: bool) -> PyResult<Py<PyAny>> {
        let cfg = ChunkConfig::new(max_tokens, overlap, include_headings).map_err(err)?;
        let doc = corpus::get_document(&self.store, doc_id).map_err(err)?;
        to_py(py, &chunk_document(&doc, &cfg))
    }

    fn add_example(&self, py: Python<'_>, doc_id: &str, question: &str, answer: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &promptkit::add_example(&self.store, doc_id, question, answer).map_err(err)?)
    }

    /// Run generation for a group and return the stored dataset.
    ///
    /// `config` uses the generation request fields (`provider_id`,
    /// `questions_per_chunk`, `prompt_mode`, ...). The GIL is released while
    /// requests are in flight.
    fn generate(&self, py: Python<'_>, group_id: &str, config: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let cfg: GenerationConfig = from_py(py, config)?;
        let dataset = py.detach(|| {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| e.to_string())?;
            rt.block_on(promptkit::generate_for_group(&self.store, &self.gateway, group_id, &cfg, None))
                .map_err(|e| e.to_string())
        });
        to_py(py, &dataset.map_err(err)?)
    }

    fn datasets(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.store.list::<DatasetRecord>().map_err(err)?)
    }

    /// Pairs of a dataset, optionally filtered ("answer.bleu2 > 0.8") and sorted ("answer.meteor:desc").
    #[pyo3(signature = (dataset_id, filter = None, sort = None))]
    fn pairs(&self, py: Python<'_>, dataset_id: &str, filter: Option<&str>, sort: Option<&str>) -> PyResult<Py<PyAny>> {
        let filter = MetricFilter::parse(filter, sort).map_err(err)?;
        let ds: DatasetRecord = self.store.load(dataset_id).map_err(err)?;
        to_py(py, &filter_sort(ds.pairs, &filter))
    }

    /// Write train/valid/test JSONL files and return the export summary.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (dataset_id, test_fraction = 0.1, valid_fraction = 0.1, shuffle = false, seed = 0, include_context = false))]
    fn export(
        &self,
        py: Python<'_>,
        dataset_id: &str,
        test_fraction: f64,
        valid_fraction: f64,
        shuffle: bool,
        seed: u64,
        include_context: bool,
    ) -> PyResult<Py<PyAny>> {
        let spec = SplitSpec {
            test_fraction,
            valid_fraction,
            shuffle,
            seed,
            include_context,
        };
        to_py(py, &export_training(&self.store, dataset_id, &spec).map_err(err)?)
    }
}

#[pymodule]
fn qgen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QgenError", m.py().get_type::<QgenError>())?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge, m)?)?;
    m.add_function(wrap_pyfunction!(meteor, m)?)?;
    m.add_function(wrap_pyfunction!(tfidf_cosine, m)?)?;
    m.add_function(wrap_pyfunction!(count_cosine, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(highlight_spans, m)?)?;
    m.add_function(wrap_pyfunction!(best_sentence, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_class::<Workspace>()?;
    Ok(())
}

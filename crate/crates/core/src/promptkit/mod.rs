//! Generation prompts, few-shot examples and model-output parsing.

mod generate;

pub use generate::{generate_for_group, preflight, GenerateError, RunProgress, RunSnapshot, RunState};

use crate::chunker::{Chunk, ChunkConfig};
use crate::corpus::Document;
use crate::datastore::{Record, Store, StoreError};
use crate::ids::short_hash;
use crate::llm_gateway::{ChatRequest, Message};
use crate::metrics::MetricName;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeSet;
use thiserror::Error;

/// Version tag of the prompt wording below, stored with every dataset.
pub const PROMPT_TEMPLATE_VERSION: &str = "qa-json-v1";

const SYSTEM_PROMPT: &str = "You write question-answer pairs grounded in a context passage. \
Every answer must be supported by the context. \
Respond with only a JSON array of objects, each with a \"question\" string and an \"answer\" string.";

/// A curated question-answer pair used as a few-shot example for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub example_id: String,
    pub doc_id: String,
    pub question: String,
    pub answer: String,
}

impl Record for ExamplePair {
    const KIND: &'static str = "examples";
    fn record_id(&self) -> &str {
        &self.example_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    #[default]
    ZeroShot,
    FewShot,
}

fn default_questions() -> usize {
    3
}
fn default_temperature() -> f64 {
    0.2
}
fn default_max_output_tokens() -> u32 {
    1024
}
fn default_metrics() -> BTreeSet<MetricName> {
    MetricName::ALL.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub provider_id: String,
    #[serde(default)]
    pub chunk_config: ChunkConfig,
    #[serde(default = "default_questions")]
    pub questions_per_chunk: usize,
    #[serde(default)]
    pub prompt_mode: PromptMode,
    #[serde(default)]
    pub num_examples: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_metrics")]
    pub metrics: BTreeSet<MetricName>,
    #[serde(default)]
    pub seed: u64,
}

impl GenerationConfig {
    pub fn new(provider_id: impl Into<String>) -> Self {
        GenerationConfig {
            provider_id: provider_id.into(),
            chunk_config: ChunkConfig::default(),
            questions_per_chunk: default_questions(),
            prompt_mode: PromptMode::ZeroShot,
            num_examples: 0,
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            metrics: default_metrics(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: &str| Err(PromptError::InvalidConfig(m.to_string()));
        if self.questions_per_chunk == 0 {
            return bad("questions_per_chunk must be at least 1");
        }
        if self.prompt_mode == PromptMode::FewShot && self.num_examples == 0 {
            return bad("few-shot prompts need num_examples >= 1");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQAPair {
    pub question: String,
    pub answer: String,
}

/// Pairs recovered from a model response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedPairs {
    pub pairs: Vec<RawQAPair>,
    /// Entries that looked like pairs but had an empty question or answer.
    pub dropped: usize,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("few-shot prompt requested but the document has no example pairs")]
    NoExamples,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("response contained no question-answer pairs")]
    UnparseableResponse,
    #[error("document '{0}' not found")]
    DocNotFound(String),
    #[error("example '{0}' not found")]
    ExampleNotFound(String),
    #[error("question and answer must not be empty")]
    EmptyField,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Examples for a document, ordered by example id.
fn select_examples<'a>(examples: &'a [ExamplePair], doc_id: &str, limit: usize) -> Vec<&'a ExamplePair> {
    let mut own: Vec<&ExamplePair> = examples.iter().filter(|e| e.doc_id == doc_id).collect();
    own.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    own.truncate(limit);
    own
}

/// Build the generation request for one chunk.
///
/// Few-shot prompts embed up to `num_examples` examples from the chunk's own
/// document, ordered by example id.
pub fn build_prompt(
    chunk: &Chunk,
    cfg: &GenerationConfig,
    examples: &[ExamplePair],
) -> Result<ChatRequest, PromptError> {
    let mut user = String::new();
    if cfg.prompt_mode == PromptMode::FewShot {
        let chosen = select_examples(examples, &chunk.doc_id, cfg.num_examples);
        if chosen.is_empty() {
            return Err(PromptError::NoExamples);
        }
        let rendered: Vec<Value> = chosen
            .iter()
            .map(|e| serde_json::json!({"question": e.question, "answer": e.answer}))
            .collect();
        user.push_str("Examples of the expected pairs:\n");
        user.push_str(&Value::Array(rendered).to_string());
        user.push_str("\n\n");
    }
    user.push_str("Context:\n\"\"\"\n");
    user.push_str(&chunk.text);
    user.push_str("\n\"\"\"\n\n");
    let n = cfg.questions_per_chunk;
    user.push_str(&format!(
        "Write {n} question-answer {} about the context.",
        if n == 1 { "pair" } else { "pairs" }
    ));
    Ok(ChatRequest {
        messages: vec![Message::system(SYSTEM_PROMPT), Message::user(user)],
        temperature: cfg.temperature,
        max_output_tokens: cfg.max_output_tokens,
    })
}

/// Byte range of the first balanced `[...]` starting at or after `from`.
fn balanced_array(text: &str, from: usize) -> Option<(usize, usize)> {
    let start = from + text[from..].find('[')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in text[start..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, start + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

fn push_pair(out: &mut ParsedPairs, question: &str, answer: &str) {
    let (q, a) = (question.trim(), answer.trim());
    if q.is_empty() || a.is_empty() {
        out.dropped += 1;
    } else {
        out.pairs.push(RawQAPair {
            question: q.to_string(),
            answer: a.to_string(),
        });
    }
}

fn parse_json_pairs(text: &str) -> ParsedPairs {
    let mut out = ParsedPairs::default();
    let mut from = 0;
    while let Some((s, e)) = balanced_array(text, from) {
        if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&text[s..e]) {
            for item in items {
                match (
                    item.get("question").and_then(Value::as_str),
                    item.get("answer").and_then(Value::as_str),
                ) {
                    (Some(q), Some(a)) => push_pair(&mut out, q, a),
                    _ => out.dropped += 1,
                }
            }
            return out;
        }
        from = s + 1;
    }
    out
}

fn strip_label<'a>(line: &'a str, labels: &[&str]) -> Option<&'a str> {
    labels.iter().find_map(|label| {
        let head = line.get(..label.len())?;
        head.eq_ignore_ascii_case(label).then(|| &line[label.len()..])
    })
}

fn parse_line_pairs(text: &str) -> ParsedPairs {
    enum Slot {
        None,
        Question,
        Answer,
    }
    let mut out = ParsedPairs::default();
    let mut question: Option<String> = None;
    let mut answer: Option<String> = None;
    let mut slot = Slot::None;
    let finish = |q: &mut Option<String>, a: &mut Option<String>, out: &mut ParsedPairs| {
        match (q.take(), a.take()) {
            (Some(q), Some(a)) => push_pair(out, &q, &a),
            (Some(_), None) => out.dropped += 1,
            _ => {}
        }
    };
    for line in text.lines().map(str::trim) {
        if let Some(rest) = strip_label(line, &["Q:", "Question:"]) {
            finish(&mut question, &mut answer, &mut out);
            question = Some(rest.trim().to_string());
            slot = Slot::Question;
        } else if let Some(rest) = strip_label(line, &["A:", "Answer:"]) {
            if question.is_some() && answer.is_none() {
                answer = Some(rest.trim().to_string());
                slot = Slot::Answer;
            }
        } else if !line.is_empty() {
            let target = match slot {
                Slot::Question => question.as_mut(),
                Slot::Answer => answer.as_mut(),
                Slot::None => None,
            };
            if let Some(t) = target {
                t.push(' ');
                t.push_str(line);
            }
        } else {
            slot = Slot::None;
        }
    }
    finish(&mut question, &mut answer, &mut out);
    out
}

/// Recover question-answer pairs from model output.
///
/// The first balanced `[...]` region that parses as a JSON array of
/// `{"question", "answer"}` objects wins; otherwise `Q:`/`A:` lines are read.
pub fn parse_response(text: &str) -> Result<ParsedPairs, PromptError> {
    let json = parse_json_pairs(text);
    if !json.pairs.is_empty() {
        return Ok(json);
    }
    let lines = parse_line_pairs(text);
    if !lines.pairs.is_empty() {
        return Ok(lines);
    }
    Err(PromptError::UnparseableResponse)
}

pub fn add_example(store: &Store, doc_id: &str, question: &str, answer: &str) -> Result<ExamplePair, PromptError> {
    let (question, answer) = (question.trim(), answer.trim());
    if question.is_empty() || answer.is_empty() {
        return Err(PromptError::EmptyField);
    }
    if store.try_load::<Document>(doc_id)?.is_none() {
        return Err(PromptError::DocNotFound(doc_id.to_string()));
    }
    store.write(|w| {
        let counter = w.next_counter()?;
        let example = ExamplePair {
            example_id: short_hash(&[doc_id, &counter.to_string()]),
            doc_id: doc_id.to_string(),
            question: question.to_string(),
            answer: answer.to_string(),
        };
        w.save(&example)?;
        Ok(example)
    })
}

/// Examples of a document ordered by example id.
pub fn list_examples(store: &Store, doc_id: &str) -> Result<Vec<ExamplePair>, PromptError> {
    if store.try_load::<Document>(doc_id)?.is_none() {
        return Err(PromptError::DocNotFound(doc_id.to_string()));
    }
    let mut out: Vec<ExamplePair> = store
        .list::<ExamplePair>()?
        .into_iter()
        .filter(|e| e.doc_id == doc_id)
        .collect();
    out.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    Ok(out)
}

pub fn delete_example(store: &Store, doc_id: &str, example_id: &str) -> Result<(), PromptError> {
    store.write(|w| {
        match w.store().try_load::<ExamplePair>(example_id)? {
            Some(e) if e.doc_id == doc_id => {}
            _ => return Err(PromptError::ExampleNotFound(example_id.to_string())),
        }
        w.delete::<ExamplePair>(example_id)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Span;

    fn chunk() -> Chunk {
        Chunk {
            chunk_id: "d-c0".into(),
            doc_id: "d".into(),
            element_ids: vec!["d-e0".into()],
            text: "Paris is the capital of France.".into(),
            token_count: 6,
            char_span: Span(0, 31),
        }
    }

    fn example(id: &str, doc: &str) -> ExamplePair {
        ExamplePair {
            example_id: id.into(),
            doc_id: doc.into(),
            question: format!("question {id}?"),
            answer: format!("answer {id}"),
        }
    }

    #[test]
    fn zero_shot_has_no_examples() {
        let cfg = GenerationConfig::new("p");
        let req = build_prompt(&chunk(), &cfg, &[example("a", "d")]).unwrap();
        assert_eq!(req.messages.len(), 2);
        let user = &req.messages[1].content;
        assert!(!user.contains("Examples"));
        assert!(user.contains("Paris is the capital of France."));
        assert!(user.contains("Write 3 question-answer pairs"));
        assert!(req.messages[0].content.contains("JSON array"));
    }

    #[test]
    fn few_shot_truncates_by_example_id() {
        let mut cfg = GenerationConfig::new("p");
        cfg.prompt_mode = PromptMode::FewShot;
        cfg.num_examples = 1;
        let examples = [example("b", "d"), example("a", "d"), example("0", "other")];
        let req = build_prompt(&chunk(), &cfg, &examples).unwrap();
        let user = &req.messages[1].content;
        assert!(user.contains(r#"[{"answer":"answer a","question":"question a?"}]"#), "{user}");
        assert!(!user.contains("question b?"));
        assert!(!user.contains("question 0?"));
        assert!(matches!(
            build_prompt(&chunk(), &cfg, &[example("z", "other")]),
            Err(PromptError::NoExamples)
        ));
    }

    #[test]
    fn prompt_is_deterministic() {
        let mut cfg = GenerationConfig::new("p");
        cfg.prompt_mode = PromptMode::FewShot;
        cfg.num_examples = 2;
        let ex = [example("a", "d"), example("b", "d")];
        let a = serde_json::to_vec(&build_prompt(&chunk(), &cfg, &ex).unwrap()).unwrap();
        let b = serde_json::to_vec(&build_prompt(&chunk(), &cfg, &ex).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut cfg = GenerationConfig::new("p");
        assert!(cfg.validate().is_ok());
        cfg.prompt_mode = PromptMode::FewShot;
        assert!(cfg.validate().is_err());
        cfg.num_examples = 1;
        cfg.questions_per_chunk = 0;
        assert!(cfg.validate().is_err());
        let parsed: GenerationConfig = serde_json::from_str(r#"{"provider_id":"p"}"#).unwrap();
        assert_eq!(parsed, GenerationConfig::new("p"));
    }

    #[test]
    fn parse_direct_json() {
        let p = parse_response(r#"[{"question":"Q1?","answer":"A1"}]"#).unwrap();
        assert_eq!(p.pairs, vec![RawQAPair { question: "Q1?".into(), answer: "A1".into() }]);
    }

    #[test]
    fn parse_json_inside_prose() {
        let text = "Sure [see below]:\n```json\n[{\"question\":\"Has ] bracket?\",\"answer\":\"yes\"},\n {\"question\":\"\",\"answer\":\"x\"}, 7]\n```";
        let p = parse_response(text).unwrap();
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.pairs[0].question, "Has ] bracket?");
        assert_eq!(p.dropped, 2);
    }

    #[test]
    fn parse_line_fallback() {
        let p = parse_response("Here you go:\nQ: What is X?\nA: Y\nQ: Why?\nA: Because.").unwrap();
        assert_eq!(
            p.pairs,
            vec![
                RawQAPair { question: "What is X?".into(), answer: "Y".into() },
                RawQAPair { question: "Why?".into(), answer: "Because.".into() },
            ]
        );
        let p = parse_response("question: multi\nline?\nANSWER: spans\ntwo lines\n\nQ: orphan").unwrap();
        assert_eq!(p.pairs[0].question, "multi line?");
        assert_eq!(p.pairs[0].answer, "spans two lines");
        assert_eq!(p.dropped, 1);
    }

    #[test]
    fn parse_failure() {
        assert!(matches!(
            parse_response("I cannot help with that."),
            Err(PromptError::UnparseableResponse)
        ));
        assert!(matches!(parse_response("[1, 2]"), Err(PromptError::UnparseableResponse)));
    }
}

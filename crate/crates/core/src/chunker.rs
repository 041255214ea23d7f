//! Token-bounded document chunks.
//!
//! Tokens are whitespace-separated units, shared with the metrics.

use crate::attribution::split_sentences;
use crate::corpus::{Document, ElementKind, CANONICAL_JOIN};
use crate::text::{char_slice, count_tokens, tokenize_ws, Span};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: usize = 300;
pub const DEFAULT_OVERLAP_TOKENS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub element_ids: Vec<String>,
    pub text: String,
    pub token_count: usize,
    /// Range of the chunk's content (excluding any heading prefix) in the
    /// document's canonical text.
    pub char_span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawChunkConfig")]
pub struct ChunkConfig {
    max_tokens: usize,
    overlap_tokens: usize,
    include_headings: bool,
}

#[derive(Deserialize)]
struct RawChunkConfig {
    #[serde(default = "default_max")]
    max_tokens: usize,
    #[serde(default = "default_overlap")]
    overlap_tokens: usize,
    #[serde(default = "default_true")]
    include_headings: bool,
}

fn default_max() -> usize {
    DEFAULT_MAX_TOKENS
}
fn default_overlap() -> usize {
    DEFAULT_OVERLAP_TOKENS
}
fn default_true() -> bool {
    true
}

impl TryFrom<RawChunkConfig> for ChunkConfig {
    type Error = ChunkConfigError;
    fn try_from(raw: RawChunkConfig) -> Result<Self, Self::Error> {
        ChunkConfig::new(raw.max_tokens, raw.overlap_tokens, raw.include_headings)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkConfigError {
    #[error("max_tokens must be greater than zero")]
    ZeroMaxTokens,
    #[error("overlap_tokens ({overlap}) must be less than max_tokens ({max})")]
    OverlapTooLarge { overlap: usize, max: usize },
}

impl ChunkConfig {
    pub fn new(
        max_tokens: usize,
        overlap_tokens: usize,
        include_headings: bool,
    ) -> Result<Self, ChunkConfigError> {
        if max_tokens == 0 {
            return Err(ChunkConfigError::ZeroMaxTokens);
        }
        if overlap_tokens >= max_tokens {
            return Err(ChunkConfigError::OverlapTooLarge {
                overlap: overlap_tokens,
                max: max_tokens,
            });
        }
        Ok(ChunkConfig {
            max_tokens,
            overlap_tokens,
            include_headings,
        })
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn overlap_tokens(&self) -> usize {
        self.overlap_tokens
    }

    pub fn include_headings(&self) -> bool {
        self.include_headings
    }
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            max_tokens: DEFAULT_MAX_TOKENS,
            overlap_tokens: DEFAULT_OVERLAP_TOKENS,
            include_headings: true,
        }
    }
}

/// A run of content waiting to become a chunk.
struct Pending {
    element_ids: Vec<String>,
    texts: Vec<String>,
    tokens: usize,
    span: Option<Span>,
}

impl Pending {
    fn new() -> Self {
        Pending {
            element_ids: Vec::new(),
            texts: Vec::new(),
            tokens: 0,
            span: None,
        }
    }

    fn push(&mut self, element_id: &str, text: String, tokens: usize, span: Span) {
        if self.element_ids.last().map(String::as_str) != Some(element_id) {
            self.element_ids.push(element_id.to_string());
        }
        self.texts.push(text);
        self.tokens += tokens;
        self.span = Some(match self.span {
            Some(s) => Span(s.0, span.1),
            None => span,
        });
    }

    fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

struct Builder<'a> {
    doc_id: &'a str,
    heading: Option<(String, usize)>,
    chunks: Vec<Chunk>,
}

impl Builder<'_> {
    fn emit(&mut self, pending: &mut Pending) {
        if pending.is_empty() {
            return;
        }
        let body = pending.texts.join(CANONICAL_JOIN);
        let (text, token_count) = match &self.heading {
            Some((h, ht)) => (format!("{h}{CANONICAL_JOIN}{body}"), pending.tokens + ht),
            None => (body, pending.tokens),
        };
        self.chunks.push(Chunk {
            chunk_id: format!("{}-c{}", self.doc_id, self.chunks.len()),
            doc_id: self.doc_id.to_string(),
            element_ids: std::mem::take(&mut pending.element_ids),
            text,
            token_count,
            char_span: pending.span.take().expect("nonempty pending has a span"),
        });
        pending.texts.clear();
        pending.tokens = 0;
    }
}

/// Token-index windows over one oversized paragraph.
///
/// Each window holds at most `budget` tokens and ends at the last sentence
/// boundary inside it when there is one; otherwise it is cut at `budget`
/// tokens. The next window starts `overlap` tokens before the previous end.
pub(crate) fn paragraph_windows(
    token_starts: &[usize],
    sentence_starts: &[usize],
    budget: usize,
    overlap: usize,
) -> Vec<(usize, usize)> {
    let n = token_starts.len();
    // Token indices at which a new sentence begins, plus the end.
    let mut boundaries: Vec<usize> = token_starts
        .iter()
        .enumerate()
        .filter(|(_, &c)| sentence_starts.contains(&c))
        .map(|(i, _)| i)
        .filter(|&i| i > 0)
        .collect();
    boundaries.push(n);

    let mut windows = Vec::new();
    let mut start = 0;
    while start < n {
        let limit = (start + budget).min(n);
        let end = boundaries
            .iter()
            .copied()
            .filter(|&b| b > start && b <= limit)
            .max()
            .unwrap_or(limit);
        windows.push((start, end));
        if end == n {
            break;
        }
        start = if end - start > overlap { end - overlap } else { end };
    }
    windows
}

/// Split a document into chunks.
///
/// Whole paragraphs are packed greedily while the total stays within
/// `max_tokens`. A paragraph that alone exceeds the budget is cut into
/// sentence-aligned windows with `overlap_tokens` of overlap. With
/// `include_headings`, each chunk is prefixed by its nearest preceding
/// heading (counted against the budget) and a new heading starts a new chunk.
pub fn chunk_document(doc: &Document, config: &ChunkConfig) -> Vec<Chunk> {
    let mut builder = Builder {
        doc_id: &doc.doc_id,
        heading: None,
        chunks: Vec::new(),
    };
    let mut pending = Pending::new();

    for element in &doc.elements {
        match element.kind {
            ElementKind::Heading => {
                if config.include_headings {
                    builder.emit(&mut pending);
                    let tokens = count_tokens(&element.text);
                    // A heading that leaves no room for content is not prefixed.
                    builder.heading =
                        (tokens < config.max_tokens).then(|| (element.text.clone(), tokens));
                }
            }
            ElementKind::Paragraph => {
                let budget = config.max_tokens - builder.heading.as_ref().map_or(0, |h| h.1);
                let tokens = count_tokens(&element.text);
                if tokens == 0 {
                    continue;
                }
                if pending.tokens + tokens <= budget {
                    pending.push(&element.element_id, element.text.clone(), tokens, element.char_span);
                    continue;
                }
                builder.emit(&mut pending);
                if tokens <= budget {
                    pending.push(&element.element_id, element.text.clone(), tokens, element.char_span);
                    continue;
                }
                let toks = tokenize_ws(&element.text);
                let token_starts: Vec<usize> = toks.iter().map(|t| t.span.0).collect();
                let sentence_starts: Vec<usize> = split_sentences(&element.text)
                    .iter()
                    .map(|s| s.span.0)
                    .collect();
                for (s, e) in
                    paragraph_windows(&token_starts, &sentence_starts, budget, config.overlap_tokens)
                {
                    let span = Span(toks[s].span.0, toks[e - 1].span.1);
                    let text = char_slice(&element.text, span).to_string();
                    pending.push(&element.element_id, text, e - s, span.shift(element.char_span.0));
                    builder.emit(&mut pending);
                }
            }
        }
    }
    builder.emit(&mut pending);
    builder.chunks
}

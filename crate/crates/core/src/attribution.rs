//! Sentence splitting, token highlights and source-sentence selection.

use crate::text::{content_tokens, is_content, normalize_token, tokenize_ws, Span};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Weight of an answer content token found in a sentence.
pub const ANSWER_WEIGHT: f64 = 2.0;
/// Weight of a question content token found in a sentence.
pub const QUESTION_WEIGHT: f64 = 1.0;

const ABBREVIATIONS: [&str; 7] = ["e.g.", "i.e.", "dr.", "mr.", "ms.", "vs.", "etc."];
const CLOSERS: [char; 7] = [')', ']', '"', '\'', '\u{201d}', '\u{2019}', '}'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HighlightSource {
    Question,
    Answer,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    /// Offsets into the chunk text.
    pub char_span: Span,
    pub source: HighlightSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub sentence_index: usize,
    pub sentence_span: Span,
    pub score: f64,
    pub runner_up_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttributionError {
    #[error("chunk contains no sentences")]
    EmptyChunk,
}

fn is_abbreviation(chars: &[char], period: usize) -> bool {
    let word_start = chars[..period]
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    let word: String = chars[word_start..=period]
        .iter()
        .skip_while(|c| matches!(c, '(' | '[' | '"' | '\'' | '\u{201c}' | '\u{2018}'))
        .collect::<String>()
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Rule-based sentence splitter.
///
/// A sentence ends at `.`, `!` or `?` (plus any closing quotes or brackets)
/// when followed by whitespace and an uppercase letter, or by end of text.
/// Periods ending a known abbreviation never split. Spans exclude the
/// whitespace between sentences.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let push = |start: usize, end: usize, out: &mut Vec<Sentence>| {
        if start < end {
            out.push(Sentence {
                text: chars[start..end].iter().collect(),
                span: Span(start, end),
            });
        }
    };

    let skip_ws = |mut i: usize| {
        while i < n && chars[i].is_whitespace() {
            i += 1;
        }
        i
    };

    let mut start = skip_ws(0);
    let mut i = start;
    while i < n {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut end = i + 1;
            while end < n && CLOSERS.contains(&chars[end]) {
                end += 1;
            }
            let boundary = if end == n {
                true
            } else if chars[end].is_whitespace() {
                let next = skip_ws(end);
                next == n || chars[next].is_uppercase()
            } else {
                false
            };
            if boundary && !(chars[i] == '.' && is_abbreviation(&chars, i)) {
                push(start, end, &mut out);
                start = skip_ws(end);
                i = start;
                continue;
            }
        }
        i += 1;
    }
    if start < n {
        let mut end = n;
        while end > start && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        push(start, end, &mut out);
    }
    out
}

/// Highlight chunk tokens that match content tokens of the question or answer.
///
/// Consecutive tokens with the same source are merged into one span.
pub fn highlight_spans(chunk_text: &str, question: &str, answer: &str) -> Vec<Highlight> {
    let q = content_tokens(question);
    let a = content_tokens(answer);
    let mut out: Vec<Highlight> = Vec::new();
    let mut last_token: Option<usize> = None;
    for (idx, tok) in tokenize_ws(chunk_text).into_iter().enumerate() {
        let Some((norm, sub)) = normalize_token(tok.text) else {
            continue;
        };
        if !is_content(&norm) {
            continue;
        }
        let source = match (q.contains(&norm), a.contains(&norm)) {
            (true, true) => HighlightSource::Both,
            (true, false) => HighlightSource::Question,
            (false, true) => HighlightSource::Answer,
            (false, false) => continue,
        };
        let span = Span(tok.span.0 + sub.0, tok.span.0 + sub.1);
        match out.last_mut() {
            Some(prev) if prev.source == source && last_token == Some(idx - 1) => {
                prev.char_span.1 = span.1;
            }
            _ => out.push(Highlight {
                char_span: span,
                source,
            }),
        }
        last_token = Some(idx);
    }
    out
}

fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> usize {
    a.intersection(b).count()
}

/// Pick the chunk sentence most likely to have produced a QA pair.
///
/// Each sentence scores `2 * |answer ∩ sentence| + |question ∩ sentence|`
/// over distinct content tokens. The highest score wins; ties go to the
/// earliest sentence.
pub fn best_sentence(
    chunk_text: &str,
    question: &str,
    answer: &str,
) -> Result<Attribution, AttributionError> {
    let sentences = split_sentences(chunk_text);
    if sentences.is_empty() {
        return Err(AttributionError::EmptyChunk);
    }
    let q = content_tokens(question);
    let a = content_tokens(answer);
    let scores: Vec<f64> = sentences
        .iter()
        .map(|s| {
            let st = content_tokens(&s.text);
            ANSWER_WEIGHT * overlap(&a, &st) as f64 + QUESTION_WEIGHT * overlap(&q, &st) as f64
        })
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &s)| s)
        .fold(0.0, f64::max);
    Ok(Attribution {
        sentence_index: best,
        sentence_span: sentences[best].span,
        score: scores[best],
        runner_up_score: runner_up,
    })
}

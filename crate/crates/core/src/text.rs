//! Shared token definitions.
//!
//! All spans in this crate are `[start, end)` offsets counted in Unicode scalar
//! values (Rust `char`s), never bytes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

/// Half-open `[start, end)` range of character offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

impl Span {
    pub fn start(&self) -> usize {
        self.0
    }

    pub fn end(&self) -> usize {
        self.1
    }

    pub fn len(&self) -> usize {
        self.1.saturating_sub(self.0)
    }

    pub fn is_empty(&self) -> bool {
        self.1 <= self.0
    }

    pub fn shift(&self, by: usize) -> Span {
        Span(self.0 + by, self.1 + by)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

/// A whitespace-delimited token and where it sits in its source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub span: Span,
}

/// Split on Unicode whitespace, reporting character spans.
pub fn tokenize_ws(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None; // (char idx, byte idx)
    let mut char_idx = 0;
    for (byte_idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some((cs, bs)) = start.take() {
                out.push(Token {
                    text: &text[bs..byte_idx],
                    span: Span(cs, char_idx),
                });
            }
        } else if start.is_none() {
            start = Some((char_idx, byte_idx));
        }
        char_idx += 1;
    }
    if let Some((cs, bs)) = start {
        out.push(Token {
            text: &text[bs..],
            span: Span(cs, char_idx),
        });
    }
    out
}

/// Number of whitespace tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Slice `text` by a character span. Out-of-range ends are clamped.
pub fn char_slice(text: &str, span: Span) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let start = indices.nth(span.0).unwrap_or(text.len());
    let end = if span.1 > span.0 {
        indices.nth(span.1 - span.0 - 1).unwrap_or(text.len())
    } else {
        start
    };
    &text[start..end]
}

/// Lowercase and strip non-alphanumeric characters from both token edges.
///
/// Returns the normalized form together with the character sub-span (relative
/// to the raw token) that survived stripping. `None` if nothing survived.
pub fn normalize_token(raw: &str) -> Option<(String, Span)> {
    let chars: Vec<char> = raw.chars().collect();
    let first = chars.iter().position(|c| c.is_alphanumeric())?;
    let last = chars.iter().rposition(|c| c.is_alphanumeric())?;
    let core: String = chars[first..=last].iter().collect();
    Some((core.to_lowercase(), Span(first, last + 1)))
}

/// The normalized token sequence used by every metric.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize_ws(text)
        .into_iter()
        .filter_map(|t| normalize_token(t.text).map(|(n, _)| n))
        .collect()
}

/// Fixed 50-word English stopword list.
pub const STOPWORDS: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for",
    "with", "from", "as", "is", "are", "was", "were", "be", "been", "being", "it", "its",
    "this", "that", "these", "those", "what", "which", "who", "whom", "whose", "when",
    "where", "why", "how", "do", "does", "did", "has", "have", "had", "not", "no", "so",
    "than", "then",
];

fn stopword_set() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

pub fn is_stopword(normalized: &str) -> bool {
    stopword_set().contains(normalized)
}

/// Content token: not a stopword and at least two characters long.
pub fn is_content(normalized: &str) -> bool {
    normalized.chars().count() >= 2 && !is_stopword(normalized)
}

/// Distinct content tokens of `text`.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    normalized_tokens(text)
        .into_iter()
        .filter(|t| is_content(t))
        .collect()
}

/// Porter-style English stem of an already normalized token.
pub fn stem(normalized: &str) -> String {
    static STEMMER: OnceLock<rust_stemmers::Stemmer> = OnceLock::new();
    STEMMER
        .get_or_init(|| rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English))
        .stem(normalized)
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> Vec<(&str, Span)> {
        tokenize_ws(text).into_iter().map(|t| (t.text, t.span)).collect()
    }

    #[test]
    fn tokenize_reports_char_spans() {
        assert_eq!(pairs("a  b"), vec![("a", Span(0, 1)), ("b", Span(3, 4))]);
        assert!(pairs("").is_empty());
        assert!(pairs(" \n\t ").is_empty());
        let toks = pairs("héllo world");
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[0].1, Span(0, 5));
        assert_eq!(toks[1].1, Span(6, 11));
    }

    #[test]
    fn char_slice_handles_multibyte() {
        let s = "héllo world";
        assert_eq!(char_slice(s, Span(0, 5)), "héllo");
        assert_eq!(char_slice(s, Span(6, 11)), "world");
        assert_eq!(char_slice(s, Span(3, 3)), "");
        assert_eq!(char_slice(s, Span(6, 99)), "world");
    }

    #[test]
    fn normalization_strips_edges_only() {
        assert_eq!(normalize_token("France."), Some(("france".into(), Span(0, 6))));
        assert_eq!(normalize_token("(U.S.)"), Some(("u.s".into(), Span(1, 4))));
        assert_eq!(normalize_token("don't"), Some(("don't".into(), Span(0, 5))));
        assert_eq!(normalize_token("--"), None);
        assert_eq!(normalized_tokens("The CAT, sat!"), vec!["the", "cat", "sat"]);
    }

    #[test]
    fn stopword_list_has_fifty_distinct_entries() {
        assert_eq!(stopword_set().len(), 50);
        assert!(is_stopword("the"));
        assert!(!is_content("of"));
        assert!(!is_content("x"));
        assert!(is_content("paris"));
    }

    #[test]
    fn stemming_conflates_inflections() {
        assert_eq!(stem("running"), stem("runs"));
        assert_eq!(stem("cats"), "cat");
    }
}

//! Sentence-level text-overlap metrics between a QA field and its source chunk.
//!
//! Every metric runs on normalized tokens ([`crate::text::normalized_tokens`]):
//! lowercase, whitespace split, punctuation stripped from token edges.
//!
//! - BLEU-n: clipped n-gram precisions, geometric mean, brevity penalty
//!   `min(1, e^(1 - r/c))`; score 0 when no unigram matches, add-one smoothing
//!   for higher orders with zero matches.
//! - ROUGE-1/2/L: F1 of n-gram overlap or LCS length.
//! - METEOR (simplified): greedy exact-then-stem unigram alignment,
//!   `F_mean = 10PR / (R + 9P)` with fragmentation penalty `0.5 (chunks/m)^3`.
//! - TF-IDF cosine with smoothed idf `ln((N+1)/(df+1)) + 1`, and raw count cosine.

use crate::promptkit::RawQAPair;
use crate::text::{normalized_tokens, stem};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("candidate text has no tokens")]
    EmptyCandidate,
    #[error("reference text has no tokens")]
    EmptyReference,
    #[error("idf corpus is empty")]
    EmptyCorpus,
    #[error("BLEU order must be between 1 and 4, got {0}")]
    InvalidOrder(usize),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("malformed filter '{0}'")]
    MalformedFilter(String),
}

type Result<T, E = MetricError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetricName {
    #[serde(rename = "bleu1")]
    Bleu1,
    #[serde(rename = "bleu2")]
    Bleu2,
    #[serde(rename = "bleu3")]
    Bleu3,
    #[serde(rename = "bleu4")]
    Bleu4,
    #[serde(rename = "rouge1_f")]
    Rouge1F,
    #[serde(rename = "rouge2_f")]
    Rouge2F,
    #[serde(rename = "rougeL_f")]
    RougeLF,
    #[serde(rename = "meteor")]
    Meteor,
    #[serde(rename = "tfidf_cosine")]
    TfidfCosine,
    #[serde(rename = "count_cosine")]
    CountCosine,
}

impl MetricName {
    pub const ALL: [MetricName; 10] = [
        MetricName::Bleu1,
        MetricName::Bleu2,
        MetricName::Bleu3,
        MetricName::Bleu4,
        MetricName::Rouge1F,
        MetricName::Rouge2F,
        MetricName::RougeLF,
        MetricName::Meteor,
        MetricName::TfidfCosine,
        MetricName::CountCosine,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Bleu1 => "bleu1",
            MetricName::Bleu2 => "bleu2",
            MetricName::Bleu3 => "bleu3",
            MetricName::Bleu4 => "bleu4",
            MetricName::Rouge1F => "rouge1_f",
            MetricName::Rouge2F => "rouge2_f",
            MetricName::RougeLF => "rougeL_f",
            MetricName::Meteor => "meteor",
            MetricName::TfidfCosine => "tfidf_cosine",
            MetricName::CountCosine => "count_cosine",
        }
    }

    fn bleu_order(&self) -> Option<usize> {
        match self {
            MetricName::Bleu1 => Some(1),
            MetricName::Bleu2 => Some(2),
            MetricName::Bleu3 => Some(3),
            MetricName::Bleu4 => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Question,
    Answer,
    Combined,
}

impl FromStr for Field {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "question" => Ok(Field::Question),
            "answer" => Ok(Field::Answer),
            "combined" => Ok(Field::Combined),
            other => Err(MetricError::UnknownField(other.to_string())),
        }
    }
}

/// Scores of one field. Metrics that were not requested are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldScores(BTreeMap<MetricName, f64>);

impl FieldScores {
    pub fn get(&self, metric: MetricName) -> Option<f64> {
        self.0.get(&metric).copied()
    }

    pub fn set(&mut self, metric: MetricName, value: f64) {
        self.0.insert(metric, value);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MetricName, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub question: FieldScores,
    pub answer: FieldScores,
    pub combined: FieldScores,
}

impl MetricReport {
    pub fn field(&self, field: Field) -> &FieldScores {
        match field {
            Field::Question => &self.question,
            Field::Answer => &self.answer,
            Field::Combined => &self.combined,
        }
    }

    pub fn get(&self, metric: MetricName, field: Field) -> Option<f64> {
        self.field(field).get(metric)
    }
}

/// Anything that carries a [`MetricReport`] and can be filtered or sorted.
pub trait HasMetrics {
    fn metric_report(&self) -> &MetricReport;
}

impl HasMetrics for MetricReport {
    fn metric_report(&self) -> &MetricReport {
        self
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sum over candidate n-grams of min(candidate count, reference count).
fn clipped_matches(cand: &[String], reference: &[String], n: usize) -> usize {
    let ref_counts = ngram_counts(reference, n);
    ngram_counts(cand, n)
        .into_iter()
        .map(|(g, c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum()
}

fn check_nonempty(cand: &[String], reference: &[String]) -> Result<()> {
    if cand.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(())
}

pub fn bleu_tokens(cand: &[String], reference: &[String], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::InvalidOrder(n));
    }
    check_nonempty(cand, reference)?;
    let c = cand.len();
    let mut log_sum = 0.0;
    for k in 1..=n {
        let total = c.saturating_sub(k - 1);
        let matches = clipped_matches(cand, reference, k);
        let p = if k == 1 {
            if matches == 0 {
                return Ok(0.0);
            }
            matches as f64 / total as f64
        } else if matches == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let r = reference.len() as f64;
    let bp = (1.0 - r / c as f64).exp().min(1.0);
    Ok(bp * (log_sum / n as f64).exp())
}

/// Sentence-level BLEU-n of `candidate` against `reference`.
pub fn bleu_n(candidate: &str, reference: &str, n: usize) -> Result<f64> {
    bleu_tokens(&normalized_tokens(candidate), &normalized_tokens(reference), n)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn rouge_n_tokens(cand: &[String], reference: &[String], n: usize) -> f64 {
    let cand_total = cand.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let overlap = clipped_matches(cand, reference, n) as f64;
    f1(overlap / cand_total as f64, overlap / ref_total as f64)
}

pub(crate) fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
}

pub fn rouge_tokens(cand: &[String], reference: &[String]) -> Result<RougeScores> {
    check_nonempty(cand, reference)?;
    let lcs = lcs_len(cand, reference) as f64;
    Ok(RougeScores {
        rouge1_f: rouge_n_tokens(cand, reference, 1),
        rouge2_f: rouge_n_tokens(cand, reference, 2),
        rouge_l_f: f1(lcs / cand.len() as f64, lcs / reference.len() as f64),
    })
}

pub fn rouge(candidate: &str, reference: &str) -> Result<RougeScores> {
    rouge_tokens(&normalized_tokens(candidate), &normalized_tokens(reference))
}

/// Greedy alignment: exact matches first, then stem matches, each taking the
/// first still-unaligned reference token left to right. Returns
/// `(candidate index, reference index)` pairs sorted by candidate index.
fn meteor_alignment(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_match: Vec<Option<usize>> = vec![None; cand.len()];
    for (i, c) in cand.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && &reference[j] == c) {
            ref_used[j] = true;
            cand_match[i] = Some(j);
        }
    }
    let ref_stems: Vec<String> = reference.iter().map(|t| stem(t)).collect();
    for (i, c) in cand.iter().enumerate() {
        if cand_match[i].is_some() {
            continue;
        }
        let cs = stem(c);
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && ref_stems[j] == cs) {
            ref_used[j] = true;
            cand_match[i] = Some(j);
        }
    }
    cand_match
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

pub fn meteor_tokens(cand: &[String], reference: &[String]) -> Result<f64> {
    check_nonempty(cand, reference)?;
    let alignment = meteor_alignment(cand, reference);
    let m = alignment.len();
    if m == 0 {
        return Ok(0.0);
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1)
        .count();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    Ok(f_mean * (1.0 - penalty))
}

pub fn meteor_simple(candidate: &str, reference: &str) -> Result<f64> {
    meteor_tokens(&normalized_tokens(candidate), &normalized_tokens(reference))
}

/// Document frequencies over a set of chunks, used for idf weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_docs: usize,
    pub doc_freq: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut stats = CorpusStats::default();
        for text in texts {
            stats.num_docs += 1;
            let distinct: BTreeSet<String> = normalized_tokens(text).into_iter().collect();
            for t in distinct {
                *stats.doc_freq.entry(t).or_insert(0) += 1;
            }
        }
        stats
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((self.num_docs as f64 + 1.0) / (df + 1.0)).ln() + 1.0
    }

    pub fn tfidf_cosine_tokens(&self, cand: &[String], reference: &[String]) -> Result<f64> {
        if self.num_docs == 0 {
            return Err(MetricError::EmptyCorpus);
        }
        check_nonempty(cand, reference)?;
        Ok(cosine(cand, reference, |t| self.idf(t)))
    }
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    counts
}

fn cosine(a: &[String], b: &[String], weight: impl Fn(&str) -> f64) -> f64 {
    let va: BTreeMap<&str, f64> = term_counts(a)
        .into_iter()
        .map(|(t, c)| (t, c * weight(t)))
        .collect();
    let vb: BTreeMap<&str, f64> = term_counts(b)
        .into_iter()
        .map(|(t, c)| (t, c * weight(t)))
        .collect();
    let dot: f64 = va
        .iter()
        .filter_map(|(t, x)| vb.get(t).map(|y| x * y))
        .sum();
    let na: f64 = va.values().map(|x| x * x).sum();
    let nb: f64 = vb.values().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
}

/// TF-IDF cosine with idf statistics taken from `corpus`.
pub fn tfidf_cosine(candidate: &str, reference: &str, corpus: &[&str]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    CorpusStats::from_texts(corpus.iter().copied())
        .tfidf_cosine_tokens(&normalized_tokens(candidate), &normalized_tokens(reference))
}

pub fn count_cosine_tokens(cand: &[String], reference: &[String]) -> Result<f64> {
    check_nonempty(cand, reference)?;
    Ok(cosine(cand, reference, |_| 1.0))
}

/// Cosine of raw term-count vectors.
pub fn count_cosine(candidate: &str, reference: &str) -> Result<f64> {
    count_cosine_tokens(&normalized_tokens(candidate), &normalized_tokens(reference))
}

fn score_field(
    cand: &[String],
    reference: &[String],
    stats: &CorpusStats,
    requested: &BTreeSet<MetricName>,
) -> Result<FieldScores> {
    let mut out = FieldScores::default();
    if requested.is_empty() {
        return Ok(out);
    }
    check_nonempty(cand, reference)?;
    let needs_rouge = requested
        .iter()
        .any(|m| matches!(m, MetricName::Rouge1F | MetricName::Rouge2F | MetricName::RougeLF));
    let rouge = if needs_rouge {
        Some(rouge_tokens(cand, reference)?)
    } else {
        None
    };
    for &metric in requested {
        let value = match metric {
            MetricName::Bleu1 | MetricName::Bleu2 | MetricName::Bleu3 | MetricName::Bleu4 => {
                bleu_tokens(cand, reference, metric.bleu_order().unwrap_or(1))?
            }
            MetricName::Rouge1F => rouge.map_or(0.0, |r| r.rouge1_f),
            MetricName::Rouge2F => rouge.map_or(0.0, |r| r.rouge2_f),
            MetricName::RougeLF => rouge.map_or(0.0, |r| r.rouge_l_f),
            MetricName::Meteor => meteor_tokens(cand, reference)?,
            MetricName::TfidfCosine => stats.tfidf_cosine_tokens(cand, reference)?,
            MetricName::CountCosine => count_cosine_tokens(cand, reference)?,
        };
        out.set(metric, value);
    }
    Ok(out)
}

/// Score a pair's question, answer and `question + " " + answer` against its chunk.
pub fn score_pair(
    pair: &RawQAPair,
    chunk_text: &str,
    stats: &CorpusStats,
    requested: &BTreeSet<MetricName>,
) -> Result<MetricReport> {
    let reference = normalized_tokens(chunk_text);
    let question = normalized_tokens(&pair.question);
    let answer = normalized_tokens(&pair.answer);
    let combined = normalized_tokens(&format!("{} {}", pair.question, pair.answer));
    Ok(MetricReport {
        question: score_field(&question, &reference, stats, requested)?,
        answer: score_field(&answer, &reference, stats, requested)?,
        combined: score_field(&combined, &reference, stats, requested)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
}

impl Comparator {
    pub fn holds(&self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Ge => value >= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Le => value <= threshold,
            Comparator::Lt => value < threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub metric: MetricName,
    pub field: Field,
    pub comparator: Comparator,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortKey {
    pub metric: MetricName,
    pub field: Field,
    pub descending: bool,
}

/// Conjunctive metric predicates plus an optional sort key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricFilter {
    #[serde(default)]
    pub predicates: Vec<Predicate>,
    #[serde(default)]
    pub sort: Option<SortKey>,
}

fn parse_metric_ref(s: &str) -> Result<(MetricName, Field)> {
    match s.split_once('.') {
        Some((field, metric)) => Ok((metric.trim().parse()?, field.trim().parse()?)),
        None => Ok((s.trim().parse()?, Field::Combined)),
    }
}

impl MetricFilter {
    /// Parse the query-string form.
    ///
    /// `filter` is a comma-separated list of `[field.]metric OP threshold`
    /// with `OP` one of `>=`, `>`, `<=`, `<`; `sort` is
    /// `[field.]metric[:asc|:desc]`. The field defaults to `combined`.
    pub fn parse(filter: Option<&str>, sort: Option<&str>) -> Result<Self> {
        let mut predicates = Vec::new();
        for clause in filter.unwrap_or("").split(',').map(str::trim).filter(|c| !c.is_empty()) {
            let (pos, op_len, comparator) = [
                (">=", Comparator::Ge),
                ("<=", Comparator::Le),
                (">", Comparator::Gt),
                ("<", Comparator::Lt),
            ]
            .iter()
            .find_map(|(op, cmp)| clause.find(op).map(|p| (p, op.len(), *cmp)))
            .ok_or_else(|| MetricError::MalformedFilter(clause.to_string()))?;
            let (metric, field) = parse_metric_ref(&clause[..pos])?;
            let threshold: f64 = clause[pos + op_len..]
                .trim()
                .parse()
                .map_err(|_| MetricError::MalformedFilter(clause.to_string()))?;
            predicates.push(Predicate {
                metric,
                field,
                comparator,
                threshold,
            });
        }
        let sort = match sort.map(str::trim).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => {
                let (key, dir) = s.rsplit_once(':').unwrap_or((s, "asc"));
                let descending = match dir {
                    "asc" => false,
                    "desc" => true,
                    _ => return Err(MetricError::MalformedFilter(s.to_string())),
                };
                let (metric, field) = parse_metric_ref(key)?;
                Some(SortKey {
                    metric,
                    field,
                    descending,
                })
            }
        };
        Ok(MetricFilter { predicates, sort })
    }

    fn accepts(&self, report: &MetricReport) -> bool {
        self.predicates.iter().all(|p| {
            report
                .get(p.metric, p.field)
                .is_some_and(|v| p.comparator.holds(v, p.threshold))
        })
    }
}

/// Stable filter followed by a stable sort. Items missing a sorted metric go last.
pub fn filter_sort<T: HasMetrics>(items: Vec<T>, filter: &MetricFilter) -> Vec<T> {
    let mut kept: Vec<T> = items
        .into_iter()
        .filter(|x| filter.accepts(x.metric_report()))
        .collect();
    if let Some(key) = &filter.sort {
        kept.sort_by(|a, b| {
            let va = a.metric_report().get(key.metric, key.field);
            let vb = b.metric_report().get(key.metric, key.field);
            match (va, vb) {
                (Some(x), Some(y)) => {
                    let ord = x.total_cmp(&y);
                    if key.descending {
                        ord.reverse()
                    } else {
                        ord
                    }
                }
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
        });
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-5;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu_n("the cat sat", "the cat sat", 4).unwrap(), 1.0);
        let v = bleu_n("the cat sat", "the cat sat on the mat", 2).unwrap();
        assert!(close(v, 0.36788, TOL), "{v}");
        let v = bleu_n("a cat sat", "the cat sat on the mat", 2).unwrap();
        let expected = (-1f64).exp() * ((2.0 / 3.0) * 0.5f64).sqrt();
        assert!(close(v, expected, 1e-12), "{v}");
        assert!(close(v, 0.212395, TOL), "{v}");
    }

    #[test]
    fn bleu_errors_and_zero() {
        assert_eq!(bleu_n("", "x", 2), Err(MetricError::EmptyCandidate));
        assert_eq!(bleu_n("x", " ", 2), Err(MetricError::EmptyReference));
        assert_eq!(bleu_n("x", "x", 0), Err(MetricError::InvalidOrder(0)));
        assert_eq!(bleu_n("x", "x", 5), Err(MetricError::InvalidOrder(5)));
        assert_eq!(bleu_n("dog", "the cat", 2).unwrap(), 0.0);
    }

    #[test]
    fn bleu_smooths_missing_higher_orders() {
        // p1 = 2/2, p2 has no matches: (0 + 1) / (1 + 1).
        let v = bleu_n("sat cat", "cat sat", 2).unwrap();
        assert!(close(v, 0.5f64.sqrt(), 1e-12));
    }

    #[test]
    fn rouge_examples() {
        let r = rouge("the cat sat", "the cat sat").unwrap();
        assert_eq!((r.rouge1_f, r.rouge2_f, r.rouge_l_f), (1.0, 1.0, 1.0));
        let r = rouge("dog ran", "the cat").unwrap();
        assert_eq!((r.rouge1_f, r.rouge2_f, r.rouge_l_f), (0.0, 0.0, 0.0));
        let r = rouge("the cat sat", "the cat sat on the mat").unwrap();
        assert!(close(r.rouge_l_f, 0.66667, TOL));
        assert_eq!(rouge("", "x"), Err(MetricError::EmptyCandidate));
    }

    #[test]
    fn meteor_examples() {
        let v = meteor_simple("the cat sat", "the cat sat").unwrap();
        assert!(close(v, 0.98148, TOL), "{v}");
        assert!(close(v, 1.0 - 0.5 / 27.0, 1e-12));
        assert_eq!(meteor_simple("dog ran", "the cat").unwrap(), 0.0);
        let v = meteor_simple("sat cat the", "the cat sat").unwrap();
        assert!(close(v, 0.5, TOL), "{v}");
    }

    #[test]
    fn meteor_uses_stem_matches() {
        // "running" and "runs" share a stem; all three align in one chunk.
        let v = meteor_simple("dogs running fast", "dog runs fast").unwrap();
        assert!(close(v, 1.0 - 0.5 / 27.0, 1e-12), "{v}");
    }

    #[test]
    fn tfidf_examples() {
        let corpus = ["cat sat", "dog ran"];
        assert!(close(tfidf_cosine("cat sat", "cat sat", &corpus).unwrap(), 1.0, 1e-12));
        assert_eq!(tfidf_cosine("dog ran", "cat sat", &corpus).unwrap(), 0.0);
        let v = tfidf_cosine("cat ran", "cat sat", &corpus).unwrap();
        assert!(close(v, 0.5, 1e-9), "{v}");
        assert_eq!(tfidf_cosine("a", "b", &[]), Err(MetricError::EmptyCorpus));
    }

    #[test]
    fn tfidf_weights_rare_terms() {
        let corpus = ["cat sat", "cat ran", "cat ate"];
        let stats = CorpusStats::from_texts(corpus);
        assert!(stats.idf("cat") < stats.idf("sat"));
        assert!(close(stats.idf("cat"), 1.0, 1e-12));
        assert!(close(stats.idf("unseen"), 4f64.ln() + 1.0, 1e-12));
    }

    #[test]
    fn score_pair_answer_inside_chunk() {
        let chunk = "the cat sat on the mat";
        let stats = CorpusStats::from_texts([chunk]);
        let all: BTreeSet<MetricName> = MetricName::ALL.into_iter().collect();
        let pair = RawQAPair {
            question: "Where did the cat sit?".into(),
            answer: "the cat sat".into(),
        };
        let report = score_pair(&pair, chunk, &stats, &all).unwrap();
        let bleu1 = report.get(MetricName::Bleu1, Field::Answer).unwrap();
        assert!(close(bleu1, (-1f64).exp(), 1e-12));
        for field in [Field::Question, Field::Answer, Field::Combined] {
            for m in MetricName::ALL {
                let v = report.get(m, field).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }

        let none = score_pair(&pair, chunk, &stats, &BTreeSet::new()).unwrap();
        assert!(none.question.is_empty() && none.answer.is_empty() && none.combined.is_empty());

        let same = RawQAPair {
            question: chunk.into(),
            answer: "x".into(),
        };
        let only: BTreeSet<_> = [MetricName::CountCosine].into_iter().collect();
        let r = score_pair(&same, chunk, &stats, &only).unwrap();
        assert!(close(r.get(MetricName::CountCosine, Field::Question).unwrap(), 1.0, 1e-12));
        assert_eq!(r.get(MetricName::Bleu1, Field::Question), None);
    }

    fn report_with(metric: MetricName, v: f64) -> MetricReport {
        let mut r = MetricReport::default();
        r.combined.set(metric, v);
        r
    }

    #[test]
    fn filter_is_strict_above() {
        let items: Vec<MetricReport> =
            [0.9, 0.8, 0.3].iter().map(|&v| report_with(MetricName::Bleu2, v)).collect();
        let f = MetricFilter::parse(Some("bleu2>0.8"), None).unwrap();
        let kept = filter_sort(items.clone(), &f);
        assert_eq!(kept, vec![items[0].clone()]);
        assert_eq!(filter_sort(items.clone(), &MetricFilter::default()), items);
    }

    #[test]
    fn sort_is_stable() {
        let mut items = Vec::new();
        for (i, v) in [0.5, 0.9, 0.5, 0.1, 0.9].iter().enumerate() {
            let mut r = report_with(MetricName::Meteor, *v);
            r.question.set(MetricName::Bleu1, i as f64);
            items.push(r);
        }
        let f = MetricFilter::parse(None, Some("meteor:desc")).unwrap();
        let order: Vec<f64> = filter_sort(items, &f)
            .iter()
            .map(|r| r.question.get(MetricName::Bleu1).unwrap())
            .collect();
        assert_eq!(order, vec![1.0, 4.0, 0.0, 2.0, 3.0]);
    }

    #[test]
    fn absent_metrics_fail_predicates() {
        let items = vec![report_with(MetricName::Bleu1, 0.9), MetricReport::default()];
        let f = MetricFilter::parse(Some("bleu1>=0"), None).unwrap();
        assert_eq!(filter_sort(items, &f).len(), 1);
    }

    #[test]
    fn filter_parsing() {
        let f = MetricFilter::parse(Some("answer.rougeL_f <= 0.5, meteor<0.2"), Some("question.bleu3")).unwrap();
        assert_eq!(f.predicates.len(), 2);
        assert_eq!(f.predicates[0].field, Field::Answer);
        assert_eq!(f.predicates[0].comparator, Comparator::Le);
        assert_eq!(f.predicates[1].field, Field::Combined);
        assert_eq!(f.sort.as_ref().unwrap().field, Field::Question);
        assert!(!f.sort.unwrap().descending);
        assert!(matches!(
            MetricFilter::parse(Some("bleu9>0.1"), None),
            Err(MetricError::UnknownMetric(_))
        ));
        assert!(matches!(
            MetricFilter::parse(Some("bleu2 ~ 0.1"), None),
            Err(MetricError::MalformedFilter(_))
        ));
        assert!(matches!(
            MetricFilter::parse(Some("context.bleu2>0.1"), None),
            Err(MetricError::UnknownField(_))
        ));
    }

    #[test]
    fn metric_report_serializes_by_name() {
        let r = report_with(MetricName::RougeLF, 0.25);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["combined"]["rougeL_f"], 0.25);
        assert!(json["question"].as_object().unwrap().is_empty());
    }
}

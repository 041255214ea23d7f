//! Training exports: train/valid/test JSON-lines splits plus a manifest.

use super::{DatasetRecord, Store, StoreError};
use crate::ids::short_hash;
use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "valid.jsonl", "test.jsonl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub valid_fraction: f64,
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub include_context: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), ExportError> {
        let in_range = |f: f64| (0.0..1.0).contains(&f);
        if !in_range(self.test_fraction)
            || !in_range(self.valid_fraction)
            || self.test_fraction + self.valid_fraction >= 1.0
        {
            return Err(ExportError::InvalidSpec(
                "fractions must lie in [0, 1) and sum to less than 1".into(),
            ));
        }
        Ok(())
    }

    /// `(train, valid, test)` sizes for `n` pairs.
    pub fn counts(&self, n: usize) -> ExportCounts {
        // The epsilon keeps products like 0.29 * 100 = 28.999999999999996 at 29.
        let take = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let test = take(self.test_fraction);
        let valid = take(self.valid_fraction);
        ExportCounts {
            train: n - test - valid,
            valid,
            test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub dataset_id: String,
    pub spec: SplitSpec,
    pub counts: ExportCounts,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportResult {
    pub export_id: String,
    pub export_dir: PathBuf,
    pub manifest: ExportManifest,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("dataset '{0}' not found")]
    DatasetNotFound(String),
    #[error("dataset has {0} pairs, too few for the requested split")]
    TooFewPairs(usize),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Render one training line: `{"text": "Q: ...\nA: ..."}`, optionally with context.
pub fn training_line(question: &str, answer: &str, context: Option<&str>) -> String {
    let text = match context {
        Some(ctx) => format!("Context: {ctx}\nQ: {question}\nA: {answer}"),
        None => format!("Q: {question}\nA: {answer}"),
    };
    serde_json::json!({ "text": text }).to_string()
}

/// Pair indices for each split: `[train, valid, test]`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..n).collect();
    if spec.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        order.shuffle(&mut rng);
    }
    let counts = spec.counts(n);
    let valid_end = counts.train + counts.valid;
    [
        order[..counts.train].to_vec(),
        order[counts.train..valid_end].to_vec(),
        order[valid_end..].to_vec(),
    ]
}

/// Stable export id for a (dataset, spec) combination.
pub fn export_id(dataset_id: &str, spec: &SplitSpec) -> String {
    let spec_json = serde_json::to_string(spec).unwrap_or_default();
    format!("{dataset_id}-{}", short_hash(&[&spec_json]))
}

/// Write train/valid/test files and a manifest under `<workspace>/exports/`.
///
/// Files are written to a temporary directory that is renamed into place
/// when complete.
pub fn export_training(
    store: &Store,
    dataset_id: &str,
    spec: &SplitSpec,
) -> Result<ExportResult, ExportError> {
    spec.validate()?;
    let dataset: DatasetRecord = store
        .try_load(dataset_id)?
        .ok_or_else(|| ExportError::DatasetNotFound(dataset_id.to_string()))?;
    let n = dataset.pairs.len();
    if n == 0 || (spec.test_fraction > 0.0 && spec.valid_fraction > 0.0 && n < 3) {
        return Err(ExportError::TooFewPairs(n));
    }

    let id = export_id(dataset_id, spec);
    let root = store.exports_dir();
    fs::create_dir_all(&root).map_err(io_err(&root))?;
    let tmp = root.join(format!(".{id}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(io_err(&tmp))?;

    let splits = split_indices(n, spec);
    for (name, indices) in SPLIT_FILES.iter().zip(&splits) {
        let path = tmp.join(name);
        let mut out = Vec::new();
        for &i in indices {
            let pair = &dataset.pairs[i];
            let context = if spec.include_context {
                dataset.chunk(&pair.chunk_id).map(|c| c.text.as_str())
            } else {
                None
            };
            out.extend_from_slice(training_line(&pair.question, &pair.answer, context).as_bytes());
            out.push(b'\n');
        }
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(&out).map_err(io_err(&path))?;
    }

    let dest = root.join(&id);
    let mut manifest = ExportManifest {
        dataset_id: dataset_id.to_string(),
        spec: spec.clone(),
        counts: spec.counts(n),
        created_at: Utc::now(),
    };
    // Re-exporting the same (dataset, spec) keeps the original timestamp so
    // the whole export directory is byte-stable.
    if let Some(previous) = fs::read(dest.join(MANIFEST_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<ExportManifest>(&b).ok())
    {
        if previous.dataset_id == manifest.dataset_id
            && previous.spec == manifest.spec
            && previous.counts == manifest.counts
        {
            manifest.created_at = previous.created_at;
        }
    }
    let manifest_path = tmp.join(MANIFEST_FILE);
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(StoreError::from)?;
    fs::write(&manifest_path, bytes).map_err(io_err(&manifest_path))?;

    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(io_err(&dest))?;
    }
    fs::rename(&tmp, &dest).map_err(io_err(&dest))?;
    Ok(ExportResult {
        export_id: id,
        export_dir: dest,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(test: f64, valid: f64) -> SplitSpec {
        SplitSpec {
            test_fraction: test,
            valid_fraction: valid,
            shuffle: false,
            seed: 0,
            include_context: false,
        }
    }

    #[test]
    fn floor_rule_counts() {
        let c = spec(0.1, 0.1).counts(100);
        assert_eq!((c.train, c.valid, c.test), (80, 10, 10));
        let c = spec(0.1, 0.1).counts(11);
        assert_eq!((c.train, c.valid, c.test), (9, 1, 1));
        let c = spec(0.29, 0.0).counts(100);
        assert_eq!(c.test, 29);
    }

    #[test]
    fn spec_validation() {
        assert!(spec(0.5, 0.5).validate().is_err());
        assert!(spec(-0.1, 0.0).validate().is_err());
        assert!(spec(1.0, 0.0).validate().is_err());
        assert!(spec(0.0, 0.0).validate().is_ok());
    }

    #[test]
    fn shuffled_splits_partition() {
        let mut s = spec(0.2, 0.1);
        s.shuffle = true;
        s.seed = 7;
        let [a, b, c] = split_indices(50, &s);
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        assert_ne!(all, (0..50).collect::<Vec<_>>());
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, &s), [a, b, c]);
    }

    #[test]
    fn line_format() {
        assert_eq!(training_line("Why?", "Because.", None), r#"{"text":"Q: Why?\nA: Because."}"#);
        assert_eq!(
            training_line("Why?", "B", Some("ctx")),
            r#"{"text":"Context: ctx\nQ: Why?\nA: B"}"#
        );
    }
}

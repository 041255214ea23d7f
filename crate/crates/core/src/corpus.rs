//! Document groups, documents and their heading/paragraph elements.

use crate::datastore::{DatasetRecord, Record, Store, StoreError, Writer};
use crate::ids::short_hash;
use crate::promptkit::ExamplePair;
use crate::text::Span;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Separator placed between element texts in a document's canonical text.
pub const CANONICAL_JOIN: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentGroup {
    pub group_id: String,
    pub name: String,
    pub created_at: DateTime<Utc>,
    pub document_ids: Vec<String>,
}

impl Record for DocumentGroup {
    const KIND: &'static str = "groups";
    fn record_id(&self) -> &str {
        &self.group_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    StructuredJson,
    Markdown,
    PlainText,
    /// Output of an external PDF/URL converter, in the structured-json schema.
    PreConverted,
}

impl std::str::FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured-json" => Ok(SourceKind::StructuredJson),
            "markdown" => Ok(SourceKind::Markdown),
            "plain-text" => Ok(SourceKind::PlainText),
            "pre-converted" => Ok(SourceKind::PreConverted),
            other => Err(format!("unknown source kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Heading,
    Paragraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub element_id: String,
    pub kind: ElementKind,
    /// Heading depth; 0 for paragraphs.
    pub level: u8,
    pub text: String,
    pub char_span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub group_id: String,
    pub title: String,
    pub source_kind: SourceKind,
    pub elements: Vec<Element>,
}

impl Record for Document {
    const KIND: &'static str = "documents";
    fn record_id(&self) -> &str {
        &self.doc_id
    }
}

impl Document {
    /// Element texts joined with [`CANONICAL_JOIN`]. Element spans index this string.
    pub fn canonical_text(&self) -> String {
        self.elements
            .iter()
            .map(|e| e.text.as_str())
            .collect::<Vec<_>>()
            .join(CANONICAL_JOIN)
    }

    /// Build a document from parsed blocks, assigning ids and spans.
    pub fn assemble(
        doc_id: String,
        group_id: String,
        title: String,
        source_kind: SourceKind,
        blocks: Vec<Block>,
    ) -> Document {
        let join_len = CANONICAL_JOIN.chars().count();
        let mut offset = 0;
        let elements = blocks
            .into_iter()
            .enumerate()
            .map(|(i, block)| {
                let len = block.text.chars().count();
                if i > 0 {
                    offset += join_len;
                }
                let span = Span(offset, offset + len);
                offset += len;
                Element {
                    element_id: format!("{doc_id}-e{i}"),
                    kind: block.kind,
                    level: block.level,
                    text: block.text,
                    char_span: span,
                }
            })
            .collect();
        Document {
            doc_id,
            group_id,
            title,
            source_kind,
            elements,
        }
    }
}

/// A parsed element before ids and spans are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub kind: ElementKind,
    pub level: u8,
    pub text: String,
}

impl Block {
    pub fn heading(level: u8, text: impl Into<String>) -> Self {
        Block {
            kind: ElementKind::Heading,
            level,
            text: text.into(),
        }
    }

    pub fn paragraph(text: impl Into<String>) -> Self {
        Block {
            kind: ElementKind::Paragraph,
            level: 0,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePosition {
    /// 1-based line and column.
    LineColumn { line: usize, column: usize },
    /// Byte offset into the payload.
    Offset(usize),
    /// Zero-based index of a record in a structured-json array.
    Record(usize),
}

impl fmt::Display for ParsePosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParsePosition::LineColumn { line, column } => write!(f, "line {line}, column {column}"),
            ParsePosition::Offset(o) => write!(f, "byte offset {o}"),
            ParsePosition::Record(i) => write!(f, "record {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at {position}: {message}")]
pub struct ParseError {
    pub position: ParsePosition,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("group name must not be empty")]
    EmptyName,
    #[error("a group named '{0}' already exists")]
    DuplicateName(String),
    #[error("group '{0}' not found")]
    GroupNotFound(String),
    #[error("document '{0}' not found")]
    NotFound(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("document produced no elements")]
    EmptyDocument,
    #[error(transparent)]
    Store(#[from] StoreError),
}

type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonElement {
    kind: ElementKind,
    #[serde(default)]
    level: Option<u8>,
    text: String,
}

/// Parse a payload into blocks according to its source kind.
pub fn parse_payload(kind: SourceKind, payload: &[u8]) -> Result<Vec<Block>, ParseError> {
    let text = std::str::from_utf8(payload).map_err(|e| ParseError {
        position: ParsePosition::Offset(e.valid_up_to()),
        message: "payload is not valid UTF-8".into(),
    })?;
    match kind {
        SourceKind::StructuredJson | SourceKind::PreConverted => parse_structured_json(text),
        SourceKind::Markdown => Ok(parse_markdown(text)),
        SourceKind::PlainText => Ok(parse_plain_text(text)),
    }
}

/// Parse a JSON array of `{"kind", "level"?, "text"}` records.
pub fn parse_structured_json(text: &str) -> Result<Vec<Block>, ParseError> {
    let records: Vec<JsonElement> = serde_json::from_str(text).map_err(|e| ParseError {
        position: ParsePosition::LineColumn {
            line: e.line(),
            column: e.column(),
        },
        message: e.to_string(),
    })?;
    let mut blocks = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let fail = |message: &str| ParseError {
            position: ParsePosition::Record(i),
            message: message.to_string(),
        };
        let level = match (rec.kind, rec.level) {
            (ElementKind::Heading, Some(l)) if l >= 1 => l,
            (ElementKind::Heading, Some(_)) => return Err(fail("heading level must be >= 1")),
            (ElementKind::Heading, None) => return Err(fail("heading requires a level")),
            (ElementKind::Paragraph, Some(_)) => {
                return Err(fail("paragraphs must not carry a level"))
            }
            (ElementKind::Paragraph, None) => 0,
        };
        let text = rec.text.trim();
        if text.is_empty() {
            continue;
        }
        blocks.push(Block {
            kind: rec.kind,
            level,
            text: text.to_string(),
        });
    }
    Ok(blocks)
}

fn heading_line(line: &str) -> Option<(u8, &str)> {
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    if !(1..=6).contains(&hashes) {
        return None;
    }
    let rest = &line[hashes..];
    rest.starts_with(' ').then(|| (hashes as u8, rest.trim()))
}

/// Markdown subset: `#`..`######` + space headings, blank-line separated paragraphs.
pub fn parse_markdown(text: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut para: Vec<&str> = Vec::new();
    let flush = |para: &mut Vec<&str>, blocks: &mut Vec<Block>| {
        if !para.is_empty() {
            blocks.push(Block::paragraph(para.join("\n")));
            para.clear();
        }
    };
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut para, &mut blocks);
        } else if let Some((level, heading)) = heading_line(line) {
            flush(&mut para, &mut blocks);
            if !heading.is_empty() {
                blocks.push(Block::heading(level, heading));
            }
        } else {
            para.push(trimmed);
        }
    }
    flush(&mut para, &mut blocks);
    blocks
}

/// Blank-line separated paragraphs, no headings.
pub fn parse_plain_text(text: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut para: Vec<&str> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if !para.is_empty() {
                blocks.push(Block::paragraph(para.join("\n")));
                para.clear();
            }
        } else {
            para.push(trimmed);
        }
    }
    if !para.is_empty() {
        blocks.push(Block::paragraph(para.join("\n")));
    }
    blocks
}

pub fn create_group(store: &Store, name: &str) -> Result<DocumentGroup> {
    let name = name.trim();
    if name.is_empty() {
        return Err(CorpusError::EmptyName);
    }
    store.write(|w| {
        let existing = w.store().list::<DocumentGroup>()?;
        if existing.iter().any(|g| g.name == name) {
            return Err(CorpusError::DuplicateName(name.to_string()));
        }
        let counter = w.next_counter()?;
        let group = DocumentGroup {
            group_id: short_hash(&[name, &counter.to_string()]),
            name: name.to_string(),
            created_at: Utc::now(),
            document_ids: Vec::new(),
        };
        w.save(&group)?;
        Ok(group)
    })
}

pub fn list_groups(store: &Store) -> Result<Vec<DocumentGroup>> {
    Ok(store.list()?)
}

pub fn get_group(store: &Store, group_id: &str) -> Result<DocumentGroup> {
    store
        .try_load(group_id)?
        .ok_or_else(|| CorpusError::GroupNotFound(group_id.to_string()))
}

/// Find a group by id, falling back to an exact name match.
pub fn find_group(store: &Store, id_or_name: &str) -> Result<Option<DocumentGroup>> {
    if let Some(g) = store.try_load::<DocumentGroup>(id_or_name)? {
        return Ok(Some(g));
    }
    let name = id_or_name.trim();
    Ok(list_groups(store)?.into_iter().find(|g| g.name == name))
}

/// Delete a group together with its documents and their examples.
pub fn delete_group(store: &Store, group_id: &str) -> Result<()> {
    store.write(|w| {
        let group: DocumentGroup = w
            .store()
            .try_load(group_id)?
            .ok_or_else(|| CorpusError::GroupNotFound(group_id.to_string()))?;
        for doc_id in &group.document_ids {
            remove_document_records(w, doc_id, &group.group_id)?;
        }
        w.delete::<DocumentGroup>(group_id)?;
        Ok(())
    })
}

pub fn ingest_document(
    store: &Store,
    group_id: &str,
    title: &str,
    source_kind: SourceKind,
    payload: &[u8],
) -> Result<Document> {
    // Validate before taking the writer lock.
    get_group(store, group_id)?;
    let blocks = parse_payload(source_kind, payload)?;
    if blocks.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    store.write(|w| {
        let mut group: DocumentGroup = w
            .store()
            .try_load(group_id)?
            .ok_or_else(|| CorpusError::GroupNotFound(group_id.to_string()))?;
        let counter = w.next_counter()?;
        let doc_id = short_hash(&[title, &counter.to_string()]);
        let doc = Document::assemble(
            doc_id,
            group.group_id.clone(),
            title.to_string(),
            source_kind,
            blocks,
        );
        w.save(&doc)?;
        group.document_ids.push(doc.doc_id.clone());
        w.save(&group)?;
        Ok(doc)
    })
}

pub fn get_document(store: &Store, doc_id: &str) -> Result<Document> {
    store
        .try_load(doc_id)?
        .ok_or_else(|| CorpusError::NotFound(doc_id.to_string()))
}

pub fn list_documents(store: &Store, group_id: &str) -> Result<Vec<Document>> {
    let group = get_group(store, group_id)?;
    group
        .document_ids
        .iter()
        .map(|id| get_document(store, id))
        .collect()
}

pub fn canonical_text(store: &Store, doc_id: &str) -> Result<String> {
    Ok(get_document(store, doc_id)?.canonical_text())
}

/// Remove a document, its examples and its group membership.
///
/// Datasets that contain pairs generated from the document are kept and
/// flagged `orphaned`.
pub fn delete_document(store: &Store, doc_id: &str) -> Result<()> {
    store.write(|w| {
        let doc: Document = w
            .store()
            .try_load(doc_id)?
            .ok_or_else(|| CorpusError::NotFound(doc_id.to_string()))?;
        if let Some(mut group) = w.store().try_load::<DocumentGroup>(&doc.group_id)? {
            group.document_ids.retain(|d| d != doc_id);
            w.save(&group)?;
        }
        remove_document_records(w, doc_id, &doc.group_id)
    })
}

fn remove_document_records(w: &mut Writer<'_>, doc_id: &str, group_id: &str) -> Result<()> {
    if w.store().try_load::<Document>(doc_id)?.is_some() {
        w.delete::<Document>(doc_id)?;
    }
    let examples: Vec<ExamplePair> = w.store().list()?;
    for ex in examples.iter().filter(|e| e.doc_id == doc_id) {
        w.delete::<ExamplePair>(&ex.example_id)?;
    }
    let datasets: Vec<DatasetRecord> = w.store().list()?;
    for mut ds in datasets {
        if ds.group_id == group_id && !ds.orphaned && ds.pairs.iter().any(|p| p.doc_id == doc_id) {
            ds.orphaned = true;
            w.save(&ds)?;
        }
    }
    Ok(())
}

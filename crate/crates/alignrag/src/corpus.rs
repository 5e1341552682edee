//! Document pool: JSONL ingestion, lookup, and corpus statistics.
//!
//! A corpus is immutable after construction; re-ingesting a file produces a
//! fresh corpus. Readers may share it freely across threads.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {0}: {1}")]
    MalformedLine(usize, String),
    #[error("duplicate document id: {0}")]
    DuplicateId(String),
    #[error("document not found: {0}")]
    NotFound(String),
    #[error("document {0} has empty text")]
    EmptyText(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A retrievable passage. `title` may be empty; `text` never is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// Aggregate corpus statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
}

/// An ordered, immutable pool of documents with per-document token counts.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    token_counts: Vec<usize>,
    avg_doc_len: f64,
    by_id: HashMap<String, usize>,
}

/// Lowercase and split on Unicode whitespace, stripping leading/trailing
/// ASCII punctuation from each word. A word that is nothing but punctuation
/// is kept verbatim so every whitespace-separated word yields exactly one
/// token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|word| {
            let lower = word.to_lowercase();
            let stripped = lower
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .to_string();
            if stripped.is_empty() {
                lower
            } else {
                stripped
            }
        })
        .collect()
}

impl Corpus {
    /// Build a corpus from documents, validating id uniqueness and non-empty
    /// text. Order is preserved.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(documents.len());
        let mut token_counts = Vec::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(doc.doc_id.clone()));
            }
            if by_id.insert(doc.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(doc.doc_id.clone()));
            }
            token_counts.push(tokenize(&doc.text).len());
        }
        let avg_doc_len = if documents.is_empty() {
            0.0
        } else {
            token_counts.iter().sum::<usize>() as f64 / documents.len() as f64
        };
        Ok(Self {
            documents,
            token_counts,
            avg_doc_len,
            by_id,
        })
    }

    /// Read a JSONL file with one `{"id", "title", "text"}` object per line.
    /// Unknown fields are ignored; blank lines are skipped. Line numbers in
    /// errors are 1-based.
    pub fn ingest_jsonl<P: AsRef<Path>>(path: P) -> Result<Self, CorpusError> {
        let file = File::open(path)?;
        let reader = BufReader::new(file);
        let mut documents = Vec::new();
        let mut seen = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line)
                .map_err(|e| CorpusError::MalformedLine(line_no, e.to_string()))?;
            if doc.doc_id.is_empty() {
                return Err(CorpusError::MalformedLine(line_no, "empty id".into()));
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::MalformedLine(line_no, "empty text".into()));
            }
            if seen.insert(doc.doc_id.clone(), line_no).is_some() {
                return Err(CorpusError::DuplicateId(doc.doc_id));
            }
            documents.push(doc);
        }
        Self::from_documents(documents)
    }

    pub fn get(&self, doc_id: &str) -> Result<&Document, CorpusError> {
        self.by_id
            .get(doc_id)
            .map(|&i| &self.documents[i])
            .ok_or_else(|| CorpusError::NotFound(doc_id.to_string()))
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            doc_count: self.documents.len(),
            avg_doc_len: self.avg_doc_len,
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn token_counts(&self) -> &[usize] {
        &self.token_counts
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

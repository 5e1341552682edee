//! Lexical and dense ranking over the corpus.
//!
//! BM25 runs on an inverted index built from the corpus tokenizer; dense
//! search ranks precomputed document vectors by cosine similarity against a
//! query embedding supplied by the gateway. Both are immutable after
//! construction and safe to share across threads.

use crate::corpus::{tokenize, Corpus};
use crate::gateway::GatewayError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("line {0}: {1}")]
    MalformedLine(usize, String),
    #[error("duplicate vector id: {0}")]
    DuplicateId(String),
    #[error("vector dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dense retrieval requires an embedding provider")]
    ProviderUnavailable,
    #[error("dense retrieval requires a vector store")]
    MissingVectors,
    #[error("query embedding failed: {0}")]
    Embedding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How candidates are fetched each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Bm25,
    Dense,
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "bm25" => Ok(RetrievalMode::Bm25),
            "dense" => Ok(RetrievalMode::Dense),
            other => Err(format!("unknown retrieval mode: {other}")),
        }
    }
}

/// One ranked search hit. Ranks are contiguous from 1 and scores never
/// increase with rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Okapi BM25 parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Term → (document index, term frequency) postings over one corpus.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_ids: Vec<String>,
    doc_lens: Vec<f64>,
    avg_len: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Self {
        Self::build_with_params(corpus, Bm25Params::default())
    }

    pub fn build_with_params(corpus: &Corpus, params: Bm25Params) -> Self {
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lens = Vec::with_capacity(corpus.len());
        for (idx, doc) in corpus.documents().iter().enumerate() {
            doc_ids.push(doc.doc_id.clone());
            let tokens = tokenize(&doc.text);
            doc_lens.push(tokens.len() as f64);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for token in tokens {
                *tf.entry(token).or_insert(0) += 1;
            }
            // Insertion per doc in corpus order keeps each postings list
            // sorted by document index.
            for (term, count) in tf {
                postings.entry(term).or_default().push((idx as u32, count));
            }
        }
        for plist in postings.values_mut() {
            plist.sort_by_key(|&(idx, _)| idx);
        }
        Self {
            postings,
            doc_ids,
            doc_lens,
            avg_len: corpus.avg_doc_len(),
            params,
        }
    }

    /// Number of distinct documents containing `term`.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, |p| p.len())
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        let Some(plist) = self.postings.get(term) else {
            return 0;
        };
        let Some(idx) = self.doc_ids.iter().position(|id| id == doc_id) else {
            return 0;
        };
        plist
            .iter()
            .find(|&&(i, _)| i as usize == idx)
            .map_or(0, |&(_, tf)| tf)
    }

    pub fn vocabulary_len(&self) -> usize {
        self.postings.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    /// Top-`n` documents by Okapi BM25 with
    /// `idf = ln(1 + (N − df + 0.5) / (df + 0.5))`. Query tokens contribute
    /// per occurrence; zero-score documents are excluded; ties break by
    /// ascending doc id.
    pub fn bm25_search(&self, query: &str, n: usize) -> Vec<ScoredDoc> {
        if n == 0 {
            return Vec::new();
        }
        let query_tokens = tokenize(query);
        if query_tokens.is_empty() {
            return Vec::new();
        }
        let doc_total = self.doc_ids.len() as f64;
        let mut scores = vec![0.0f64; self.doc_ids.len()];
        for token in &query_tokens {
            let Some(plist) = self.postings.get(token) else {
                continue;
            };
            let df = plist.len() as f64;
            let idf = (1.0 + (doc_total - df + 0.5) / (df + 0.5)).ln();
            for &(idx, tf) in plist {
                let tf = tf as f64;
                let len = self.doc_lens[idx as usize];
                let denom = tf
                    + self.params.k1
                        * (1.0 - self.params.b + self.params.b * len / self.avg_len);
                scores[idx as usize] += idf * (tf * (self.params.k1 + 1.0)) / denom;
            }
        }
        let mut hits: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(_, score)| score > 0.0)
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        hits.into_iter()
            .take(n)
            .enumerate()
            .map(|(i, (idx, score))| ScoredDoc {
                doc_id: self.doc_ids[idx].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct VectorLine {
    id: String,
    vec: Vec<f64>,
}

/// Fixed-dimension document embeddings.
#[derive(Debug, Clone)]
pub struct VectorStore {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl VectorStore {
    /// Load JSONL `{"id": string, "vec": [float, ...]}` lines. All vectors
    /// must share one dimension; ids must be unique.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, RetrieverError> {
        let reader = BufReader::new(File::open(path)?);
        let mut ids: Vec<String> = Vec::new();
        let mut vectors = Vec::new();
        let mut dim = 0usize;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: VectorLine = serde_json::from_str(&line)
                .map_err(|e| RetrieverError::MalformedLine(line_no, e.to_string()))?;
            if parsed.id.is_empty() {
                return Err(RetrieverError::MalformedLine(line_no, "empty id".into()));
            }
            if parsed.vec.is_empty() {
                return Err(RetrieverError::MalformedLine(line_no, "empty vector".into()));
            }
            if dim == 0 {
                dim = parsed.vec.len();
            } else if parsed.vec.len() != dim {
                return Err(RetrieverError::DimensionMismatch {
                    expected: dim,
                    got: parsed.vec.len(),
                });
            }
            if ids.contains(&parsed.id) {
                return Err(RetrieverError::DuplicateId(parsed.id));
            }
            ids.push(parsed.id);
            vectors.push(parsed.vec);
        }
        Ok(Self { ids, vectors, dim })
    }

    pub fn from_pairs(pairs: &[(&str, Vec<f64>)]) -> Self {
        let dim = pairs.first().map_or(0, |(_, v)| v.len());
        Self {
            ids: pairs.iter().map(|(id, _)| id.to_string()).collect(),
            vectors: pairs.iter().map(|(_, v)| v.clone()).collect(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    /// Top-`n` documents by cosine similarity; ties break by ascending doc
    /// id. A zero-norm vector on either side scores 0.
    pub fn vector_search(
        &self,
        query_vec: &[f64],
        n: usize,
    ) -> Result<Vec<ScoredDoc>, RetrieverError> {
        if !self.ids.is_empty() && query_vec.len() != self.dim {
            return Err(RetrieverError::DimensionMismatch {
                expected: self.dim,
                got: query_vec.len(),
            });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut hits: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine(query_vec, v)))
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        });
        Ok(hits
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(i, (idx, score))| ScoredDoc {
                doc_id: self.ids[idx].clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a.sqrt() * norm_b.sqrt())
}

/// Supplies query embeddings for dense retrieval. Implemented by the
/// gateway (precomputed file or embedding endpoint).
pub trait QueryEmbedder {
    fn embed_query(&self, text: &str) -> Result<Vec<f64>, RetrieverError>;
}

impl QueryEmbedder for crate::gateway::Gateway {
    fn embed_query(&self, text: &str) -> Result<Vec<f64>, RetrieverError> {
        // Inherent method resolution picks the gateway's own embed_query.
        self.embed_query(text).map_err(|e| match e {
            GatewayError::ProviderUnavailable => RetrieverError::ProviderUnavailable,
            other => RetrieverError::Embedding(other.to_string()),
        })
    }
}

/// Unified retrieval entry point used by the pipeline each iteration.
pub fn retrieve(
    index: &InvertedIndex,
    vectors: Option<&VectorStore>,
    embedder: Option<&dyn QueryEmbedder>,
    query: &str,
    n: usize,
    mode: RetrievalMode,
) -> Result<Vec<ScoredDoc>, RetrieverError> {
    match mode {
        RetrievalMode::Bm25 => Ok(index.bm25_search(query, n)),
        RetrievalMode::Dense => {
            let store = vectors.ok_or(RetrieverError::MissingVectors)?;
            let embedder = embedder.ok_or(RetrieverError::ProviderUnavailable)?;
            let query_vec = embedder.embed_query(query)?;
            store.vector_search(&query_vec, n)
        }
    }
}

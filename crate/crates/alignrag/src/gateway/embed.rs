//! Precomputed query embeddings keyed by text digest.
//!
//! Dense retrieval without a live embedding endpoint: a JSONL file maps the
//! SHA-256 of each expected query string to its vector, loaded once and
//! consulted before any provider call.

use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedFileError {
    #[error("line {0}: {1}")]
    MalformedLine(usize, String),
    #[error("duplicate embedding hash: {0}")]
    DuplicateHash(String),
    #[error("line {line}: expected {expected}-dimensional vector, got {got}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Deserialize)]
struct EmbedLine {
    sha256: String,
    vec: Vec<f64>,
}

/// An immutable digest → vector table. All vectors share one dimension.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    by_hash: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl PrecomputedEmbeddings {
    /// Load a JSONL file of `{"sha256": hex, "vec": [f64]}` lines. Every
    /// vector must be finite, non-empty, and match the first line's
    /// dimension; hashes must be unique 64-char lowercase hex.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, EmbedFileError> {
        let reader = BufReader::new(File::open(path)?);
        let mut by_hash = HashMap::new();
        let mut dim = 0usize;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: EmbedLine = serde_json::from_str(&line)
                .map_err(|e| EmbedFileError::MalformedLine(line_no, e.to_string()))?;
            if parsed.sha256.len() != 64
                || !parsed.sha256.chars().all(|c| c.is_ascii_hexdigit())
            {
                return Err(EmbedFileError::MalformedLine(
                    line_no,
                    "sha256 must be 64 hex characters".into(),
                ));
            }
            if parsed.vec.is_empty() {
                return Err(EmbedFileError::MalformedLine(line_no, "empty vector".into()));
            }
            if dim == 0 {
                dim = parsed.vec.len();
            } else if parsed.vec.len() != dim {
                return Err(EmbedFileError::DimensionMismatch {
                    line: line_no,
                    expected: dim,
                    got: parsed.vec.len(),
                });
            }
            let hash = parsed.sha256.to_lowercase();
            if by_hash.insert(hash.clone(), parsed.vec).is_some() {
                return Err(EmbedFileError::DuplicateHash(hash));
            }
        }
        Ok(Self { by_hash, dim })
    }

    /// Build directly from (text, vector) pairs — handy in tests.
    pub fn from_texts(pairs: &[(&str, Vec<f64>)]) -> Self {
        let mut by_hash = HashMap::new();
        let mut dim = 0;
        for (text, vec) in pairs {
            dim = vec.len();
            by_hash.insert(Self::hash_of(text), vec.clone());
        }
        Self { by_hash, dim }
    }

    /// SHA-256 of the exact text bytes, lowercase hex.
    pub fn hash_of(text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }

    pub fn lookup(&self, text: &str) -> Option<Vec<f64>> {
        self.by_hash.get(&Self::hash_of(text)).cloned()
    }

    pub fn len(&self) -> usize {
        self.by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hash.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

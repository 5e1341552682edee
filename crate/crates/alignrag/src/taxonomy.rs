//! Alignment labels and per-document alignment reports.
//!
//! After reflection, each candidate document grounds some fraction of the
//! query's components; that fraction is the alignment ratio, and the label
//! partitions it: 1 → full, 0 → none, anything between → partial.

use crate::aligner::{AlignmentSet, SyntacticComponents};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("query has no present components")]
    EmptyComponents,
    #[error("tau must satisfy 0 < tau <= 1, got {0}")]
    InvalidTau(f64),
}

/// How much of the query a document grounds. Lower rank sorts first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlignmentLabel {
    #[serde(rename = "full")]
    FullAlignment,
    #[serde(rename = "partial")]
    PartialAlignment,
    #[serde(rename = "none")]
    NoAlignment,
}

impl AlignmentLabel {
    /// Rerank order: full before partial before none.
    pub fn rank(&self) -> u8 {
        match self {
            AlignmentLabel::FullAlignment => 0,
            AlignmentLabel::PartialAlignment => 1,
            AlignmentLabel::NoAlignment => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AlignmentLabel::FullAlignment => "full",
            AlignmentLabel::PartialAlignment => "partial",
            AlignmentLabel::NoAlignment => "none",
        }
    }
}

impl std::fmt::Display for AlignmentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One document's alignment verdict against one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub doc_id: String,
    pub reflected: AlignmentSet,
    pub ratio: f64,
    pub label: AlignmentLabel,
    pub retriever_score: f64,
}

/// Counts per label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTally {
    pub full: u64,
    pub partial: u64,
    pub none: u64,
}

impl LabelTally {
    pub fn add(&mut self, label: AlignmentLabel) {
        match label {
            AlignmentLabel::FullAlignment => self.full += 1,
            AlignmentLabel::PartialAlignment => self.partial += 1,
            AlignmentLabel::NoAlignment => self.none += 1,
        }
    }

    pub fn count(&self, label: AlignmentLabel) -> u64 {
        match label {
            AlignmentLabel::FullAlignment => self.full,
            AlignmentLabel::PartialAlignment => self.partial,
            AlignmentLabel::NoAlignment => self.none,
        }
    }

    pub fn total(&self) -> u64 {
        self.full + self.partial + self.none
    }
}

/// Label a document from its post-reflection alignment. The ratio divides
/// aligned components by present components, so the label boundaries are
/// exact: all present roles aligned ⇔ ratio 1, none ⇔ ratio 0.
pub fn classify(
    components: &SyntacticComponents,
    reflected: &AlignmentSet,
    doc_id: &str,
    retriever_score: f64,
) -> Result<AlignmentReport, TaxonomyError> {
    let present = components.present_roles();
    if present.is_empty() {
        return Err(TaxonomyError::EmptyComponents);
    }
    let aligned = reflected
        .aligned
        .iter()
        .filter(|role| present.contains(*role))
        .count();
    let ratio = aligned as f64 / present.len() as f64;
    let label = if aligned == present.len() {
        AlignmentLabel::FullAlignment
    } else if aligned == 0 {
        AlignmentLabel::NoAlignment
    } else {
        AlignmentLabel::PartialAlignment
    };
    Ok(AlignmentReport {
        doc_id: doc_id.to_string(),
        reflected: reflected.clone(),
        ratio,
        label,
        retriever_score,
    })
}

/// Whether the report clears the update threshold (inclusive).
pub fn is_high_alignment(report: &AlignmentReport, tau: f64) -> Result<bool, TaxonomyError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(TaxonomyError::InvalidTau(tau));
    }
    Ok(report.ratio >= tau)
}

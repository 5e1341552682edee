//! Label-aware reranking, sliding-window support selection, and sufficiency
//! verification.
//!
//! Candidates are ordered by (alignment label, retriever score, doc id); a
//! window of that order is repeatedly offered to the model together with the
//! current picks, and the model keeps the k best until the pool is exhausted.
//! A final yes/no check decides whether the chosen documents suffice to
//! answer the query.

use crate::corpus::Document;
use crate::gateway::{call_with_reparse, Gateway, GatewayError, TemplateName};
use crate::taxonomy::{AlignmentLabel, AlignmentReport};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("k and w must both be at least 1 (k={k}, w={w})")]
    InvalidParams { k: usize, w: usize },
    #[error("selection backend failed: {0}")]
    Backend(#[from] GatewayError),
}

/// A candidate document together with its alignment report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolEntry {
    pub report: AlignmentReport,
    pub doc: Document,
}

/// Candidates ordered by (label rank, retriever score desc, doc id asc).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RankedPool {
    entries: Vec<PoolEntry>,
}

/// The ordering key shared by rerank, the deterministic selector, and the
/// degraded-mode fallback.
fn pool_key_cmp(a: &PoolEntry, b: &PoolEntry) -> Ordering {
    a.report
        .label
        .rank()
        .cmp(&b.report.label.rank())
        .then_with(|| b.report.retriever_score.total_cmp(&a.report.retriever_score))
        .then_with(|| a.report.doc_id.cmp(&b.report.doc_id))
}

/// Order candidates so that fully aligned documents come first, then
/// partially aligned, then unaligned; within a label, higher retriever score
/// first, ties broken by ascending doc id.
pub fn rerank(mut entries: Vec<PoolEntry>) -> RankedPool {
    entries.sort_by(pool_key_cmp);
    RankedPool { entries }
}

impl RankedPool {
    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    /// The best-ranked candidate.
    pub fn top(&self) -> Option<&PoolEntry> {
        self.entries.first()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The same pool with unaligned documents dropped instead of ranked last.
    pub fn excluding_no_alignment(&self) -> RankedPool {
        RankedPool {
            entries: self
                .entries
                .iter()
                .filter(|e| e.report.label != AlignmentLabel::NoAlignment)
                .cloned()
                .collect(),
        }
    }
}

/// The chosen supporting documents plus the sufficiency verdict.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub docs: Vec<Document>,
    pub verified: bool,
}

impl SupportSet {
    pub fn from_entries(entries: &[PoolEntry], verified: bool) -> Self {
        SupportSet {
            docs: entries.iter().map(|e| e.doc.clone()).collect(),
            verified,
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }
}

/// Audit record for one selection window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub window_index: usize,
    pub offered_ids: Vec<String>,
    pub chosen_ids: Vec<String>,
}

/// Result of sliding-window selection over one pool.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSelection {
    pub chosen: Vec<PoolEntry>,
    pub traces: Vec<SelectionTrace>,
    pub degraded: bool,
}

fn one_line(text: &str) -> String {
    text.replace(['\n', '\r'], " ")
}

/// One `- id=… label=… score=… | text` row per entry, the listing format the
/// selection prompt uses.
fn labeled_docs_block<'a>(entries: impl Iterator<Item = &'a PoolEntry>) -> String {
    entries
        .map(|e| {
            format!(
                "- id={} label={} score={} | {}",
                e.report.doc_id,
                e.report.label,
                e.report.retriever_score,
                one_line(&e.doc.text)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One `[n] id=… | text` row per document, the numbered listing the
/// verification and answer prompts use. Numbering starts at 1.
pub fn numbered_docs_block(docs: &[Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] id={} | {}", i + 1, d.doc_id, one_line(&d.text)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Ask the model which `count` of the offered docs best support the query.
/// Replies must be a `chosen: id, id, …` line naming exactly `count` distinct
/// offered ids; one re-prompt is attempted before giving up.
fn select_call(
    query: &str,
    count: usize,
    docs: &str,
    offered_ids: &[String],
    gateway: &Gateway,
) -> Result<Vec<String>, GatewayError> {
    let count_str = count.to_string();
    call_with_reparse(
        gateway,
        TemplateName::Select,
        &[("query", query), ("count", &count_str), ("docs", docs)],
        |reply| {
            let rest = reply
                .trim()
                .strip_prefix("chosen:")
                .ok_or_else(|| "reply lacks a chosen: line".to_string())?;
            let ids: Vec<String> = rest
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if ids.len() != count {
                return Err(format!("expected {count} ids, got {}", ids.len()));
            }
            let mut seen = std::collections::HashSet::new();
            for id in &ids {
                if !offered_ids.contains(id) {
                    return Err(format!("id {id} was not offered"));
                }
                if !seen.insert(id.clone()) {
                    return Err(format!("id {id} repeated"));
                }
            }
            Ok(ids)
        },
    )
}

/// Deterministic stand-in for a failed selection call: the top `count`
/// offered entries by the rerank key.
fn fallback_top_k(offered: &[PoolEntry], count: usize) -> Vec<String> {
    let mut order: Vec<&PoolEntry> = offered.iter().collect();
    order.sort_by(|a, b| pool_key_cmp(a, b));
    order
        .into_iter()
        .take(count)
        .map(|e| e.report.doc_id.clone())
        .collect()
}

/// Slide a window of `w` entries over the pool (best rank first, stride `w`);
/// at each step the model picks the best `min(k, offered)` docs from the
/// current picks plus the window. A failed call falls back to the
/// deterministic top-k for that window and marks the selection degraded.
pub fn window_select(
    query: &str,
    pool: &RankedPool,
    current: &[PoolEntry],
    k: usize,
    w: usize,
    gateway: &Gateway,
) -> Result<WindowSelection, SelectError> {
    if k == 0 || w == 0 {
        return Err(SelectError::InvalidParams { k, w });
    }
    let mut current: Vec<PoolEntry> = current.to_vec();
    let mut traces = Vec::new();
    let mut degraded = false;
    for (window_index, window) in pool.entries().chunks(w).enumerate() {
        let mut offered = current.clone();
        for entry in window {
            if !offered.iter().any(|e| e.report.doc_id == entry.report.doc_id) {
                offered.push(entry.clone());
            }
        }
        let offered_ids: Vec<String> = offered.iter().map(|e| e.report.doc_id.clone()).collect();
        let count = k.min(offered.len());
        let docs = labeled_docs_block(offered.iter());
        let chosen_ids = match select_call(query, count, &docs, &offered_ids, gateway) {
            Ok(ids) => ids,
            Err(_) => {
                degraded = true;
                fallback_top_k(&offered, count)
            }
        };
        current = chosen_ids
            .iter()
            .map(|id| {
                offered
                    .iter()
                    .find(|e| &e.report.doc_id == id)
                    .expect("chosen ids are validated against offered")
                    .clone()
            })
            .collect();
        traces.push(SelectionTrace {
            window_index,
            offered_ids,
            chosen_ids,
        });
    }
    Ok(WindowSelection {
        chosen: current,
        traces,
        degraded,
    })
}

/// Ask whether the support documents contain enough information to answer
/// the query. An empty support set never suffices; backend failures bubble
/// up so the caller can decide how to degrade.
pub fn verify(query: &str, support: &SupportSet, gateway: &Gateway) -> Result<bool, SelectError> {
    if support.docs.is_empty() {
        return Ok(false);
    }
    let docs = numbered_docs_block(&support.docs);
    let verdict = call_with_reparse(
        gateway,
        TemplateName::Verify,
        &[("query", query), ("docs", &docs)],
        |reply| match reply.trim().to_lowercase().as_str() {
            "yes" => Ok(true),
            "no" => Ok(false),
            other => Err(format!("expected yes or no, got {other:?}")),
        },
    )?;
    Ok(verdict)
}

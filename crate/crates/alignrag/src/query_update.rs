//! Next-iteration query construction.
//!
//! After the first retrieval pass, the query for iteration t+1 is built from
//! the alignment result of iteration t: when the top document already grounds
//! the query well enough (ratio ≥ τ) the original query is concatenated with
//! that document's text; otherwise a short pseudo-document is generated for
//! the rewritten query and appended to it instead.

use crate::aligner::{components_block, RewrittenQuery, SyntacticComponents};
use crate::corpus::Document;
use crate::gateway::{call_with_reparse, Gateway, GatewayError, TemplateName};
use crate::taxonomy::{is_high_alignment, AlignmentReport, TaxonomyError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueryUpdateError {
    #[error("tau must satisfy 0 < tau <= 1, got {0}")]
    InvalidTau(f64),
    #[error("rewritten query is empty")]
    EmptyQuery,
    #[error("query-update backend failed: {0}")]
    Backend(#[from] GatewayError),
}

/// Token budgets for updated queries and pseudo-documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateLimits {
    pub max_query_tokens: usize,
    pub max_pseudo_tokens: usize,
}

impl Default for UpdateLimits {
    fn default() -> Self {
        UpdateLimits {
            max_query_tokens: 512,
            max_pseudo_tokens: 128,
        }
    }
}

/// The query as it evolves across iterations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryState {
    pub original_q: String,
    pub rewritten_q: Option<String>,
    pub updated_q: Option<String>,
    pub iteration: usize,
    pub history: Vec<String>,
}

impl QueryState {
    /// Fresh state for iteration 1, which retrieves with the query verbatim.
    pub fn new(original: &str) -> Self {
        QueryState {
            original_q: original.to_string(),
            rewritten_q: None,
            updated_q: None,
            iteration: 1,
            history: Vec::new(),
        }
    }

    /// The query the current iteration should retrieve with.
    pub fn current_query(&self) -> &str {
        self.updated_q.as_deref().unwrap_or(&self.original_q)
    }
}

/// A short hypothetical passage standing in for the document the rewritten
/// query hopes to find.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PseudoDocument {
    pub text: String,
    pub source_query: String,
}

/// Which update branch fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateBranch {
    Concat,
    Pseudo,
}

impl UpdateBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateBranch::Concat => "concat",
            UpdateBranch::Pseudo => "pseudo",
        }
    }
}

impl std::fmt::Display for UpdateBranch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Audit record for one query update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub iteration: usize,
    pub branch: UpdateBranch,
    pub ratio: f64,
    pub tau: f64,
    pub updated_q: String,
}

/// Keep at most `max` whitespace tokens; the text is returned unchanged
/// (original spacing intact) when already within budget.
pub fn truncate_tokens(text: &str, max: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max {
        text.to_string()
    } else {
        tokens[..max].join(" ")
    }
}

/// Generate a pseudo-document for the rewritten query. The component spans
/// sent along are the rewritten ones: each unmatched span already replaced
/// by its synonym.
pub fn generate_pseudo_doc(
    q_prime: &RewrittenQuery,
    components: &SyntacticComponents,
    gateway: &Gateway,
    max_pseudo_tokens: usize,
) -> Result<PseudoDocument, QueryUpdateError> {
    if q_prime.rendered.trim().is_empty() {
        return Err(QueryUpdateError::EmptyQuery);
    }
    let mut effective = SyntacticComponents::default();
    for (role, span) in components.present() {
        let span = q_prime
            .replacements
            .get(&role)
            .map(String::as_str)
            .unwrap_or(span);
        effective.set(role, Some(span.to_string()));
    }
    let block = components_block(effective.present());
    let text = call_with_reparse(
        gateway,
        TemplateName::PseudoDoc,
        &[("query", q_prime.rendered.as_str()), ("components", &block)],
        |reply| {
            let reply = reply.trim();
            if reply.is_empty() {
                Err("empty passage".to_string())
            } else {
                Ok(reply.to_string())
            }
        },
    )?;
    Ok(PseudoDocument {
        text: truncate_tokens(&text, max_pseudo_tokens),
        source_query: q_prime.rendered.clone(),
    })
}

/// Build the next iteration's query. With `ratio ≥ tau` (inclusive) the
/// original query is concatenated with the top document's text; otherwise the
/// rewritten query is concatenated with a freshly generated pseudo-document.
/// Returns the advanced state plus an audit trace.
#[allow(clippy::too_many_arguments)]
pub fn scqu_update(
    state: &QueryState,
    top_report: &AlignmentReport,
    top_doc: &Document,
    q_prime: &RewrittenQuery,
    components: &SyntacticComponents,
    tau: f64,
    gateway: &Gateway,
    limits: &UpdateLimits,
) -> Result<(QueryState, UpdateTrace), QueryUpdateError> {
    let high = is_high_alignment(top_report, tau).map_err(|err| match err {
        TaxonomyError::InvalidTau(t) => QueryUpdateError::InvalidTau(t),
        TaxonomyError::EmptyComponents => QueryUpdateError::EmptyQuery,
    })?;
    let (branch, updated) = if high {
        (
            UpdateBranch::Concat,
            format!("{} {}", state.original_q, top_doc.text),
        )
    } else {
        let pseudo = generate_pseudo_doc(q_prime, components, gateway, limits.max_pseudo_tokens)?;
        (
            UpdateBranch::Pseudo,
            format!("{} {}", q_prime.rendered, pseudo.text),
        )
    };
    let updated = truncate_tokens(&updated, limits.max_query_tokens);
    let mut history = state.history.clone();
    if let Some(prior) = &state.updated_q {
        history.push(prior.clone());
    }
    let next = QueryState {
        original_q: state.original_q.clone(),
        rewritten_q: Some(q_prime.rendered.clone()),
        updated_q: Some(updated.clone()),
        iteration: state.iteration + 1,
        history,
    };
    let trace = UpdateTrace {
        iteration: next.iteration,
        branch,
        ratio: top_report.ratio,
        tau,
        updated_q: updated,
    };
    Ok((next, trace))
}

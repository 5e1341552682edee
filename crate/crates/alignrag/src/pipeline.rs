//! End-to-end orchestration: decompose once, then iterate retrieve → align →
//! rerank → select → verify until the support set suffices or the iteration
//! budget runs out, and finally generate a cited answer.
//!
//! The loop degrades rather than aborts wherever a safe fallback exists: a
//! failed alignment labels the candidate unaligned, a failed selection falls
//! back to the deterministic top-k, a failed verification counts as "no",
//! and invalid citations are stripped after one re-prompt. Every such event
//! sets the run's `degraded` flag.

use crate::aligner::{
    align_components, decompose, reflect, synonym_rewrite, AlignError, AlignmentSet,
    RewrittenQuery, SyntacticComponents,
};
use crate::corpus::{Corpus, CorpusError, Document};
use crate::gateway::{Gateway, GatewayError, TemplateName};
use crate::query_update::{
    scqu_update, QueryState, QueryUpdateError, UpdateLimits, UpdateTrace,
};
use crate::rerank_select::{
    numbered_docs_block, rerank, verify, window_select, PoolEntry, RankedPool, SelectError,
    SelectionTrace, SupportSet,
};
use crate::retriever::{retrieve, InvertedIndex, RetrievalMode, RetrieverError, VectorStore};
use crate::taxonomy::{classify, AlignmentLabel, LabelTally};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("corpus is empty or not indexed")]
    CorpusNotReady,
    #[error("query is empty")]
    EmptyQuery,
    #[error("model backend failed: {0}")]
    Backend(#[from] GatewayError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrieverError),
    #[error("corpus lookup failed: {0}")]
    Corpus(#[from] CorpusError),
    #[error("query update failed: {0}")]
    Update(#[from] QueryUpdateError),
    #[error("selection failed: {0}")]
    Selection(#[from] SelectError),
}

/// Knobs for one retrieval run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Supporting documents to keep.
    pub k: usize,
    /// Iteration budget.
    pub max_iterations: usize,
    /// Candidates retrieved per iteration.
    pub candidates_per_iteration: usize,
    /// Alignment-ratio threshold steering the query update.
    pub tau: f64,
    /// Selection window size (stride equals the window).
    pub window: usize,
    pub retrieval_mode: RetrievalMode,
    pub temperature: f64,
    /// Rerank previously labeled documents together with the new candidates.
    pub pool_union: bool,
    /// Drop unaligned documents from the pool instead of ranking them last.
    pub exclude_no_alignment: bool,
    pub limits: UpdateLimits,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 5,
            max_iterations: 4,
            candidates_per_iteration: 20,
            tau: 0.8,
            window: 10,
            retrieval_mode: RetrievalMode::Bm25,
            temperature: 0.0,
            pool_union: true,
            exclude_no_alignment: false,
            limits: UpdateLimits::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.k < 1 {
            return fail(format!("k must be at least 1, got {}", self.k));
        }
        if self.max_iterations < 1 {
            return fail(format!(
                "max_iterations must be at least 1, got {}",
                self.max_iterations
            ));
        }
        if self.candidates_per_iteration < self.k {
            return fail(format!(
                "candidates_per_iteration ({}) must be at least k ({})",
                self.candidates_per_iteration, self.k
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must satisfy 0 < tau <= 1, got {}", self.tau));
        }
        if self.window < 1 {
            return fail(format!("window must be at least 1, got {}", self.window));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return fail(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            ));
        }
        Ok(())
    }
}

/// One statement of the generated answer with the documents it cites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub citations: Vec<String>,
}

/// The generated answer: an ordered list of cited statements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CitedAnswer {
    pub statements: Vec<Statement>,
}

/// Audit record for one loop iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// The query string this iteration retrieved with.
    pub query_used: String,
    /// Candidates the retriever returned this iteration.
    pub retrieved: usize,
    /// How many of them had not been labeled before.
    pub newly_labeled: usize,
    /// Pool size after rerank (and exclusion, when enabled).
    pub pool_size: usize,
    pub tally: LabelTally,
    /// How this iteration's query was built; absent on iteration 1.
    pub update: Option<UpdateTrace>,
    pub selections: Vec<SelectionTrace>,
    pub support_ids: Vec<String>,
    /// Alignment labels of the support docs, parallel to `support_ids`.
    pub support_labels: Vec<AlignmentLabel>,
    pub verified: bool,
}

/// Everything one query run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub query: String,
    pub support: SupportSet,
    pub answer: Option<CitedAnswer>,
    pub iterations_used: usize,
    pub docs_retrieved_total: usize,
    pub degraded: bool,
    /// Labels of every document aligned during the run, each counted once.
    pub label_tally: LabelTally,
    /// Labels of the final support documents.
    pub support_label_tally: LabelTally,
    pub iteration_traces: Vec<IterationTrace>,
}

/// The run summary written for consumers: support reduced to doc ids,
/// traces omitted (they ship separately as JSONL).
#[derive(Serialize)]
struct ExternalRun<'a> {
    query: &'a str,
    support: Vec<&'a str>,
    answer: Option<&'a CitedAnswer>,
    iterations_used: usize,
    verified: bool,
    degraded: bool,
    docs_retrieved_total: usize,
}

impl RunResult {
    pub fn verified(&self) -> bool {
        self.support.verified
    }

    /// Pretty-printed summary JSON with a stable field order.
    pub fn external_json(&self) -> String {
        let external = ExternalRun {
            query: &self.query,
            support: self.support.docs.iter().map(|d| d.doc_id.as_str()).collect(),
            answer: self.answer.as_ref(),
            iterations_used: self.iterations_used,
            verified: self.support.verified,
            degraded: self.degraded,
            docs_retrieved_total: self.docs_retrieved_total,
        };
        serde_json::to_string_pretty(&external).expect("run summaries are always serializable")
    }
}

/// Split one answer line into its text and the bracketed citation indices.
/// `[12]`-style tokens whose content is all digits are citations; anything
/// else stays in the text.
fn split_citations(line: &str) -> (String, Vec<usize>) {
    let mut text = String::new();
    let mut citations = Vec::new();
    let mut rest = line;
    while let Some(open) = rest.find('[') {
        let (before, bracketed) = rest.split_at(open);
        match bracketed[1..].split_once(']') {
            Some((inner, after))
                if !inner.is_empty() && inner.bytes().all(|b| b.is_ascii_digit()) =>
            {
                text.push_str(before);
                citations.push(inner.parse().expect("all-digit index fits usize"));
                rest = after;
            }
            _ => {
                text.push_str(before);
                text.push('[');
                rest = &bracketed[1..];
            }
        }
    }
    text.push_str(rest);
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    (text, citations)
}

/// Parse an answer reply into statements. Indices must fall in
/// `1..=doc_count` unless `strip` is set, in which case invalid ones are
/// dropped. The literal reply `none` means "no statements".
fn parse_statements(
    reply: &str,
    docs: &[Document],
    strip: bool,
) -> Result<Vec<Statement>, String> {
    if reply.trim().eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut statements = Vec::new();
    for line in reply.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (text, indices) = split_citations(line);
        let mut citations = Vec::new();
        for idx in indices {
            if idx == 0 || idx > docs.len() {
                if strip {
                    continue;
                }
                return Err(format!(
                    "citation [{idx}] is outside 1..={}",
                    docs.len()
                ));
            }
            let id = docs[idx - 1].doc_id.clone();
            if !citations.contains(&id) {
                citations.push(id);
            }
        }
        if text.is_empty() && citations.is_empty() {
            continue;
        }
        statements.push(Statement { text, citations });
    }
    Ok(statements)
}

/// Ask the model to answer from the support documents, citing them by
/// number. A reply citing an out-of-range document gets one re-prompt; if
/// the second reply still does, the invalid citations are stripped and the
/// returned flag marks the answer degraded.
pub fn generate_answer(
    query: &str,
    support: &SupportSet,
    gateway: &Gateway,
) -> Result<(CitedAnswer, bool), PipelineError> {
    let docs_block = numbered_docs_block(&support.docs);
    let slots = [("query", query), ("docs", docs_block.as_str())];
    let prompt = crate::gateway::render(TemplateName::Generate, &slots)?;
    let reply = gateway.call(TemplateName::Generate, &prompt)?;
    match parse_statements(&reply, &support.docs, false) {
        Ok(statements) => Ok((CitedAnswer { statements }, false)),
        Err(reason) => {
            let reprompt = format!(
                "{prompt}\n\nYour previous reply cited a document that is not \
                 in the list ({reason}). Cite only the numbered documents above."
            );
            let retry = gateway.call(TemplateName::Generate, &reprompt)?;
            match parse_statements(&retry, &support.docs, false) {
                Ok(statements) => Ok((CitedAnswer { statements }, false)),
                Err(_) => {
                    let statements = parse_statements(&retry, &support.docs, true)
                        .expect("stripping parse accepts any reply");
                    Ok((CitedAnswer { statements }, true))
                }
            }
        }
    }
}

/// The retrieval loop, bound to an ingested corpus, its index, and a model
/// gateway.
pub struct Pipeline<'a> {
    corpus: &'a Corpus,
    index: &'a InvertedIndex,
    vectors: Option<&'a VectorStore>,
    gateway: &'a Gateway,
    config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        corpus: &'a Corpus,
        index: &'a InvertedIndex,
        gateway: &'a Gateway,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if corpus.is_empty() || index.doc_count() == 0 {
            return Err(PipelineError::CorpusNotReady);
        }
        Ok(Pipeline {
            corpus,
            index,
            vectors: None,
            gateway,
            config,
        })
    }

    /// Attach a vector store for dense retrieval.
    pub fn with_vectors(mut self, vectors: &'a VectorStore) -> Self {
        self.vectors = Some(vectors);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Run the full loop for one query.
    pub fn run_query(&self, query: &str) -> Result<RunResult, PipelineError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        let cfg = &self.config;
        let components = decompose(query, self.gateway).map_err(|err| match err {
            AlignError::EmptyQuery => PipelineError::EmptyQuery,
            AlignError::Backend(g) => PipelineError::Backend(g),
        })?;

        let mut degraded = false;
        let mut labeled: HashMap<String, PoolEntry> = HashMap::new();
        let mut support: Vec<PoolEntry> = Vec::new();
        let mut verified = false;
        let mut state = QueryState::new(query);
        let mut last_pool: Option<RankedPool> = None;
        let mut docs_retrieved_total = 0usize;
        let mut iterations_used = 0usize;
        let mut traces: Vec<IterationTrace> = Vec::new();

        for iteration in 1..=cfg.max_iterations {
            // Update the query only once a previous pass produced support.
            let mut update_trace = None;
            if iteration > 1 && !support.is_empty() {
                if let Some(top) = last_pool.as_ref().and_then(|p| p.top()) {
                    match self.update_query(&state, top, query, &components) {
                        Ok((next, trace)) => {
                            state = next;
                            update_trace = Some(trace);
                        }
                        Err(UpdateFallback::Degraded(next)) => {
                            degraded = true;
                            state = next;
                        }
                        Err(UpdateFallback::Fatal(err)) => return Err(err),
                    }
                }
            }

            let retrieval_query = state.current_query().to_string();
            let scored = retrieve(
                self.index,
                self.vectors,
                Some(self.gateway),
                &retrieval_query,
                cfg.candidates_per_iteration,
                cfg.retrieval_mode,
            )?;
            docs_retrieved_total += scored.len();

            // Fine-grained alignment, once per document per run: verdicts
            // for already-labeled docs are reused with their score refreshed.
            let mut newly_labeled = 0usize;
            let mut iteration_ids: Vec<String> = Vec::with_capacity(scored.len());
            for hit in &scored {
                iteration_ids.push(hit.doc_id.clone());
                if let Some(entry) = labeled.get_mut(&hit.doc_id) {
                    entry.report.retriever_score = hit.score;
                    continue;
                }
                let doc = self.corpus.get(&hit.doc_id)?;
                let entry = match self.align_candidate(&components, doc, hit.score) {
                    Ok(entry) => entry,
                    Err(_) => {
                        // Alignment failed: rank the candidate last instead
                        // of aborting the run.
                        degraded = true;
                        let report =
                            classify(&components, &AlignmentSet::default(), &hit.doc_id, hit.score)
                                .expect("components were validated at decomposition");
                        PoolEntry {
                            report,
                            doc: doc.clone(),
                        }
                    }
                };
                labeled.insert(hit.doc_id.clone(), entry);
                newly_labeled += 1;
            }

            let pool_entries: Vec<PoolEntry> = if cfg.pool_union {
                labeled.values().cloned().collect()
            } else {
                iteration_ids
                    .iter()
                    .filter_map(|id| labeled.get(id).cloned())
                    .collect()
            };
            let mut pool = rerank(pool_entries);
            // Tally before the exclusion filter so dropped labels stay
            // visible in the trace.
            let mut tally = LabelTally::default();
            for entry in pool.entries() {
                tally.add(entry.report.label);
            }
            if cfg.exclude_no_alignment {
                pool = pool.excluding_no_alignment();
            }

            let selection = window_select(query, &pool, &support, cfg.k, cfg.window, self.gateway)?;
            degraded |= selection.degraded;
            support = selection.chosen;

            verified = if support.is_empty() {
                false
            } else {
                match verify(
                    query,
                    &SupportSet::from_entries(&support, false),
                    self.gateway,
                ) {
                    Ok(v) => v,
                    Err(_) => {
                        // An unanswerable sufficiency check counts as "no".
                        degraded = true;
                        false
                    }
                }
            };

            iterations_used = iteration;
            traces.push(IterationTrace {
                iteration,
                query_used: retrieval_query,
                retrieved: scored.len(),
                newly_labeled,
                pool_size: pool.len(),
                tally,
                update: update_trace,
                selections: selection.traces,
                support_ids: support.iter().map(|e| e.report.doc_id.clone()).collect(),
                support_labels: support.iter().map(|e| e.report.label).collect(),
                verified,
            });
            last_pool = Some(pool);
            if verified {
                break;
            }
        }

        let mut label_tally = LabelTally::default();
        for entry in labeled.values() {
            label_tally.add(entry.report.label);
        }
        let mut support_label_tally = LabelTally::default();
        for entry in &support {
            support_label_tally.add(entry.report.label);
        }

        let support = SupportSet::from_entries(&support, verified);
        let answer = if support.docs.is_empty() {
            None
        } else {
            match generate_answer(query, &support, self.gateway) {
                Ok((answer, answer_degraded)) => {
                    degraded |= answer_degraded;
                    Some(answer)
                }
                Err(_) => {
                    degraded = true;
                    None
                }
            }
        };

        Ok(RunResult {
            query: query.to_string(),
            support,
            answer,
            iterations_used,
            docs_retrieved_total,
            degraded,
            label_tally,
            support_label_tally,
            iteration_traces: traces,
        })
    }

    /// Align one candidate: first-pass judgment, then reflection.
    fn align_candidate(
        &self,
        components: &SyntacticComponents,
        doc: &Document,
        score: f64,
    ) -> Result<PoolEntry, PipelineError> {
        let first_pass = align_components(components, doc, self.gateway)
            .map_err(|e| PipelineError::Backend(backend_of(e)))?;
        let reflected = reflect(components, doc, &first_pass, self.gateway)
            .map_err(|e| PipelineError::Backend(backend_of(e)))?;
        let report = classify(components, &reflected, &doc.doc_id, score)
            .expect("components were validated at decomposition");
        Ok(PoolEntry {
            report,
            doc: doc.clone(),
        })
    }

    /// Build the next query state from the previous top-ranked document.
    /// The synonym rewrite is only computed when the low-alignment branch
    /// needs it; a rewrite failure falls back to the original query text.
    fn update_query(
        &self,
        state: &QueryState,
        top: &PoolEntry,
        query: &str,
        components: &SyntacticComponents,
    ) -> Result<(QueryState, UpdateTrace), UpdateFallback> {
        let cfg = &self.config;
        let high = crate::taxonomy::is_high_alignment(&top.report, cfg.tau)
            .map_err(|e| UpdateFallback::Fatal(PipelineError::InvalidConfig(e.to_string())))?;
        let q_prime = if high {
            identity_rewrite(query)
        } else {
            match synonym_rewrite(query, components, &top.report.reflected, &top.doc, self.gateway)
            {
                Ok(rewritten) => rewritten,
                Err(_) => {
                    // Keep the original wording if the rewrite fails; the
                    // update still proceeds.
                    return Err(UpdateFallback::Degraded(advance_without_backend(
                        state,
                        query,
                        state.iteration + 1,
                    )));
                }
            }
        };
        match scqu_update(
            state,
            &top.report,
            &top.doc,
            &q_prime,
            components,
            cfg.tau,
            self.gateway,
            &cfg.limits,
        ) {
            Ok(pair) => Ok(pair),
            Err(QueryUpdateError::Backend(_)) => Err(UpdateFallback::Degraded(
                advance_with_query(state, q_prime.rendered.clone(), &q_prime),
            )),
            Err(err) => Err(UpdateFallback::Fatal(PipelineError::Update(err))),
        }
    }
}

enum UpdateFallback {
    /// The update could not consult the backend; retrieval continues with
    /// this state and the run is marked degraded.
    Degraded(QueryState),
    Fatal(PipelineError),
}

fn identity_rewrite(query: &str) -> RewrittenQuery {
    RewrittenQuery {
        original: query.to_string(),
        replacements: Default::default(),
        rendered: query.to_string(),
    }
}

fn advance_without_backend(state: &QueryState, query: &str, iteration: usize) -> QueryState {
    let mut history = state.history.clone();
    if let Some(prior) = &state.updated_q {
        history.push(prior.clone());
    }
    QueryState {
        original_q: state.original_q.clone(),
        rewritten_q: Some(query.to_string()),
        updated_q: Some(query.to_string()),
        iteration,
        history,
    }
}

fn advance_with_query(state: &QueryState, updated: String, q_prime: &RewrittenQuery) -> QueryState {
    let mut history = state.history.clone();
    if let Some(prior) = &state.updated_q {
        history.push(prior.clone());
    }
    QueryState {
        original_q: state.original_q.clone(),
        rewritten_q: Some(q_prime.rendered.clone()),
        updated_q: Some(updated),
        iteration: state.iteration + 1,
        history,
    }
}

fn backend_of(err: AlignError) -> GatewayError {
    match err {
        AlignError::Backend(g) => g,
        AlignError::EmptyQuery => GatewayError::MalformedReply("empty query".into()),
    }
}

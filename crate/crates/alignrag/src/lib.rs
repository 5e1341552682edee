//! Iterative grounded-alignment retrieval with verifiable, citation-bearing
//! generation.
//!
//! The crate is organized around a retrieve → align → update loop:
//!
//! * [`corpus`] — document pool, JSONL ingestion, tokenization.
//! * [`retriever`] — BM25 inverted index and dense vector search.
//! * [`gateway`] — every model interaction (real or mock) as a rendered
//!   prompt → reply string, with caching, retries, and a replay tape.
//! * [`aligner`] — sentence decomposition into syntactic components and
//!   fine-grained alignment of those components against a document.
//! * [`taxonomy`] — alignment labels (full / partial / none) and reports.
//! * [`query_update`] — support-conditioned query rewriting between
//!   retrieval rounds.
//! * [`rerank_select`] — label-aware reranking, sliding-window support
//!   selection, and support verification.
//! * [`pipeline`] — the end-to-end loop plus cited answer generation.
//! * [`evalkit`] — answer/citation quality metrics and label-conversion
//!   statistics.

pub mod aligner;
pub mod corpus;
pub mod evalkit;
pub mod gateway;
pub mod pipeline;
pub mod query_update;
pub mod rerank_select;
pub mod retriever;
pub mod taxonomy;

pub use aligner::{AlignError, AlignmentSet, RewrittenQuery, Role, SyntacticComponents};
pub use corpus::{tokenize, Corpus, CorpusError, CorpusStats, Document};
pub use gateway::{Gateway, GatewayConfig, GatewayError, TemplateName};
pub use rerank_select::{
    rerank, verify, window_select, PoolEntry, RankedPool, SelectError, SelectionTrace,
    SupportSet, WindowSelection,
};

pub use evalkit::{
    citation_scores, claim_recall, em_recall, label_conversion, load_gold, normalize,
    score_record, EntailmentOracle, EvalConfig, EvalError, GoldRecord, LabelStats, LlmOracle,
    Prf, RecordScores, SubstringOracle,
};

pub use pipeline::{
    generate_answer, CitedAnswer, IterationTrace, Pipeline, PipelineConfig, PipelineError,
    RunResult, Statement,
};

pub use query_update::{
    PseudoDocument, QueryState, QueryUpdateError, UpdateBranch, UpdateLimits, UpdateTrace,
};
pub use retriever::{InvertedIndex, RetrievalMode, RetrieverError, ScoredDoc, VectorStore};
pub use taxonomy::{AlignmentLabel, AlignmentReport, LabelTally, TaxonomyError};

//! Subcommand implementations: ingest, run, eval, trace.
//!
//! Exit codes are a stable contract: 0 for success, 1 for runs that
//! completed with degraded results, 2 for usage or data errors. All
//! artifacts are plain JSON so golden tests can diff them.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use alignrag::evalkit::{
    label_conversion, load_gold, round2, EntailmentOracle, GoldRecord, LabelStats, LlmOracle,
    RecordScores, SubstringOracle,
};
use alignrag::{
    score_record, CitedAnswer, Corpus, Document, EvalConfig, Gateway, InvertedIndex, LabelTally,
    Pipeline, RetrievalMode, RunResult, UpdateBranch, VectorStore,
};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::Effective;

/// Current version of the index artifact written by `ingest`.
pub const INDEX_VERSION: u32 = 1;

/// On-disk index artifact: the corpus documents plus a format version.
/// The inverted index itself is rebuilt on load — it is cheap to derive
/// and keeping documents canonical makes the artifact diffable.
#[derive(Debug, Serialize, Deserialize)]
pub struct IndexFile {
    pub version: u32,
    pub documents: Vec<Document>,
}

/// Ingest a JSONL corpus and persist the index artifact.
pub fn cmd_ingest(corpus_path: &Path, index_path: &Path) -> Result<ExitCode> {
    let corpus = Corpus::ingest_jsonl(corpus_path)
        .with_context(|| format!("cannot ingest {}", corpus_path.display()))?;
    let index = InvertedIndex::build(&corpus);
    let artifact = IndexFile {
        version: INDEX_VERSION,
        documents: corpus.documents().to_vec(),
    };
    let json = serde_json::to_string_pretty(&artifact)?;
    fs::write(index_path, json + "\n")
        .with_context(|| format!("cannot write {}", index_path.display()))?;
    println!(
        "ingested {} documents (avg length {:.2} tokens, {} distinct terms) -> {}",
        index.doc_count(),
        corpus.avg_doc_len(),
        index.vocabulary_len(),
        index_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_index(path: &Path) -> Result<Corpus> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read index {}", path.display()))?;
    let artifact: IndexFile = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a valid index artifact", path.display()))?;
    if artifact.version != INDEX_VERSION {
        bail!(
            "index {} has version {}, expected {INDEX_VERSION}",
            path.display(),
            artifact.version
        );
    }
    Ok(Corpus::from_documents(artifact.documents)?)
}

/// File inputs for `run`, separate from the merged settings.
#[derive(Debug)]
pub struct RunInputs {
    pub query: Option<String>,
    pub queries_file: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub out_dir: PathBuf,
}

fn gather_queries(inputs: &RunInputs) -> Result<Vec<String>> {
    match (&inputs.query, &inputs.queries_file) {
        (Some(query), None) => Ok(vec![query.clone()]),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read queries file {}", path.display()))?;
            let queries: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|line| !line.is_empty())
                .map(String::from)
                .collect();
            if queries.is_empty() {
                bail!("queries file {} has no queries", path.display());
            }
            Ok(queries)
        }
        (Some(_), Some(_)) => bail!("give either a single query or --queries, not both"),
        (None, None) => bail!("give a query argument or --queries FILE"),
    }
}

/// Answer every query through the retrieval loop, writing one result file
/// per query. Exit 0 when all verified cleanly, 1 when any run degraded,
/// 2 when any query failed outright.
pub fn cmd_run(inputs: &RunInputs, effective: &Effective) -> Result<ExitCode> {
    println!("config: {}", effective.redacted_json());
    let queries = gather_queries(inputs)?;
    let corpus = match (&inputs.index, &inputs.corpus) {
        (Some(path), _) => load_index(path)?,
        (None, Some(path)) => Corpus::ingest_jsonl(path)
            .with_context(|| format!("cannot ingest {}", path.display()))?,
        (None, None) => bail!("run needs --index (produced by `alignrag ingest`) or --corpus"),
    };
    let index = InvertedIndex::build(&corpus);
    let vectors = match &inputs.vectors {
        Some(path) => Some(
            VectorStore::load(path)
                .with_context(|| format!("cannot load vectors from {}", path.display()))?,
        ),
        None => None,
    };
    if effective.pipeline.retrieval_mode == RetrievalMode::Dense && vectors.is_none() {
        bail!("dense retrieval needs --vectors");
    }
    let gateway = effective.build_gateway()?;
    let mut pipeline = Pipeline::new(&corpus, &index, &gateway, effective.pipeline.clone())?;
    if let Some(store) = &vectors {
        pipeline = pipeline.with_vectors(store);
    }
    fs::create_dir_all(&inputs.out_dir)
        .with_context(|| format!("cannot create output dir {}", inputs.out_dir.display()))?;

    let next = AtomicUsize::new(0);
    let any_degraded = AtomicBool::new(false);
    let lines: Mutex<Vec<Option<String>>> = Mutex::new(vec![None; queries.len()]);
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let worker_count = effective.workers.min(queries.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let query = &queries[i];
                let path = inputs.out_dir.join(format!("q{i:04}.json"));
                match run_one(&pipeline, query, &path) {
                    Ok(result) => {
                        if result.degraded {
                            any_degraded.store(true, Ordering::Relaxed);
                        }
                        let line = format!(
                            "q{i:04} verified={} degraded={} iterations={} support={} -> {}",
                            result.verified(),
                            result.degraded,
                            result.iterations_used,
                            result.support.docs.len(),
                            path.display()
                        );
                        lines.lock().unwrap()[i] = Some(line);
                    }
                    Err(err) => {
                        failures
                            .lock()
                            .unwrap()
                            .push(format!("q{i:04} ({query}): {err:#}"));
                    }
                }
            });
        }
    });

    for line in lines.into_inner().unwrap().into_iter().flatten() {
        println!("{line}");
    }
    let failures = failures.into_inner().unwrap();
    for failure in &failures {
        eprintln!("error: {failure}");
    }
    if !failures.is_empty() {
        eprintln!("{} of {} queries failed", failures.len(), queries.len());
        return Ok(ExitCode::from(2));
    }
    Ok(if any_degraded.into_inner() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn run_one(pipeline: &Pipeline, query: &str, path: &Path) -> Result<RunResult> {
    let result = pipeline.run_query(query)?;
    let json = serde_json::to_string_pretty(&result)?;
    fs::write(path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(result)
}

/// Which entailment oracle scores citations during `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Substring,
    Llm,
}

/// File inputs and scoring options for `eval`.
#[derive(Debug)]
pub struct EvalInputs {
    pub results_dir: PathBuf,
    pub gold: PathBuf,
    pub out: PathBuf,
    pub oracle: OracleKind,
    pub comma_split: bool,
    pub recall_cap: bool,
}

fn load_results(dir: &Path) -> Result<Vec<(PathBuf, RunResult)>> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("cannot read results dir {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|path| path.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no result files (*.json) in {}", dir.display());
    }
    let mut results = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let result: RunResult = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a run result", path.display()))?;
        results.push((path, result));
    }
    Ok(results)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for value in values {
        sum += value;
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64, n))
}

fn rounded_stats(stats: &LabelStats) -> LabelStats {
    let mut rounded = *stats;
    rounded.full.conversion_rate = round2(rounded.full.conversion_rate);
    rounded.partial.conversion_rate = round2(rounded.partial.conversion_rate);
    rounded.none.conversion_rate = round2(rounded.none.conversion_rate);
    rounded
}

/// Score a directory of run results against gold records and write an
/// aggregate report. Every result must have a gold record; gold records
/// without results only draw a warning.
pub fn cmd_eval(inputs: &EvalInputs, effective: &Effective) -> Result<ExitCode> {
    let gold_records = load_gold(&inputs.gold)
        .with_context(|| format!("cannot load gold records from {}", inputs.gold.display()))?;
    let mut gold_by_query: HashMap<&str, &GoldRecord> = HashMap::new();
    for record in &gold_records {
        if gold_by_query.insert(record.query.as_str(), record).is_some() {
            bail!("duplicate gold record for query {:?}", record.query);
        }
    }

    let results = load_results(&inputs.results_dir)?;
    let mut seen: HashSet<&str> = HashSet::new();
    let mut matched: Vec<(&RunResult, &GoldRecord)> = Vec::new();
    for (path, result) in &results {
        if !seen.insert(result.query.as_str()) {
            bail!(
                "duplicate result for query {:?} ({})",
                result.query,
                path.display()
            );
        }
        let gold = gold_by_query.get(result.query.as_str()).copied().with_context(|| {
            format!(
                "no gold record for query {:?} ({})",
                result.query,
                path.display()
            )
        })?;
        matched.push((result, gold));
    }
    for query in gold_by_query.keys().filter(|q| !seen.contains(*q)) {
        eprintln!("note: gold record {query:?} has no result file");
    }

    let gateway: Option<Gateway> = match inputs.oracle {
        OracleKind::Llm => Some(effective.build_gateway()?),
        OracleKind::Substring => None,
    };
    let substring = SubstringOracle;
    let llm;
    let oracle: &dyn EntailmentOracle = match (inputs.oracle, &gateway) {
        (OracleKind::Substring, _) => &substring,
        (OracleKind::Llm, Some(gw)) => {
            llm = LlmOracle::new(gw);
            &llm
        }
        (OracleKind::Llm, None) => unreachable!("llm oracle always builds a gateway"),
    };
    let eval_config = EvalConfig {
        comma_split: inputs.comma_split,
        recall_cap: inputs.recall_cap,
    };

    let empty = CitedAnswer::default();
    let mut records: Vec<RecordScores> = Vec::new();
    let mut tally_all = LabelTally::default();
    let mut tally_final = LabelTally::default();
    for (result, gold) in &matched {
        let answer = result.answer.as_ref().unwrap_or(&empty);
        let scores = score_record(answer, &result.support, gold, oracle, &eval_config)
            .with_context(|| format!("cannot score query {:?}", result.query))?;
        records.push(scores);
        tally_all.full += result.label_tally.full;
        tally_all.partial += result.label_tally.partial;
        tally_all.none += result.label_tally.none;
        tally_final.full += result.support_label_tally.full;
        tally_final.partial += result.support_label_tally.partial;
        tally_final.none += result.support_label_tally.none;
    }
    let label_stats = rounded_stats(&label_conversion(&tally_all, &tally_final)?);

    let em = mean(records.iter().filter_map(|r| r.em_recall));
    let list = mean(records.iter().filter_map(|r| r.list_f1.map(|p| p.f1)));
    let claim = mean(records.iter().filter_map(|r| r.claim_recall));
    let cite_p = mean(records.iter().map(|r| r.citation.precision));
    let cite_r = mean(records.iter().map(|r| r.citation.recall));
    let cite_f = mean(records.iter().map(|r| r.citation.f1));

    let aggregate_cell = |cell: Option<(f64, usize)>| {
        cell.map(|(value, n)| serde_json::json!({ "mean": round2(value), "queries": n }))
    };
    let report = serde_json::json!({
        "records_scored": records.len(),
        "conventions": {
            "citation_recall": "statements without citations stay in the denominator and score 0",
            "citation_precision": "a citation is precise when it entails the statement or the remaining citations alone do not",
        },
        "aggregate": {
            "em_recall": aggregate_cell(em),
            "list_f1": aggregate_cell(list),
            "claim_recall": aggregate_cell(claim),
            "citation_precision": aggregate_cell(cite_p),
            "citation_recall": aggregate_cell(cite_r),
            "citation_f1": aggregate_cell(cite_f),
        },
        "label_conversion": label_stats,
        "records": records,
    });
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&inputs.out, json + "\n")
        .with_context(|| format!("cannot write {}", inputs.out.display()))?;

    println!("{:<20} {:>7} {:>8}", "metric", "queries", "mean");
    let rows = [
        ("em_recall", em),
        ("list_f1", list),
        ("claim_recall", claim),
        ("citation_precision", cite_p),
        ("citation_recall", cite_r),
        ("citation_f1", cite_f),
    ];
    for (name, cell) in rows {
        match cell {
            Some((value, n)) => println!("{name:<20} {n:>7} {:>8.2}", value),
            None => println!("{name:<20} {:>7} {:>8}", "-", "-"),
        }
    }
    println!(
        "label conversion: full {}/{} ({:.2}), partial {}/{} ({:.2}), none {}/{} ({:.2})",
        label_stats.full.count_final,
        label_stats.full.count_all,
        label_stats.full.conversion_rate,
        label_stats.partial.count_final,
        label_stats.partial.count_all,
        label_stats.partial.conversion_rate,
        label_stats.none.count_final,
        label_stats.none.count_all,
        label_stats.none.conversion_rate,
    );
    println!("report -> {}", inputs.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Pretty-print the per-iteration audit trail of one run result.
pub fn cmd_trace(path: &Path) -> Result<ExitCode> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let result: RunResult = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run result", path.display()))?;
    println!("query: {}", result.query);
    println!(
        "verified: {}   degraded: {}   documents retrieved: {}",
        result.verified(),
        result.degraded,
        result.docs_retrieved_total
    );
    if result.iteration_traces.is_empty() {
        println!("no iterations");
        return Ok(ExitCode::SUCCESS);
    }
    println!(
        "{:>4}  {:<7} {:>9} {:>4} {:>4}  {:>4} {:>7} {:>4}  {:<8} support",
        "iter", "branch", "retrieved", "new", "pool", "full", "partial", "none", "verified"
    );
    for trace in &result.iteration_traces {
        let branch = trace.update.as_ref().map_or("-", |update| match update.branch {
            UpdateBranch::Concat => "concat",
            UpdateBranch::Pseudo => "pseudo",
        });
        println!(
            "{:>4}  {:<7} {:>9} {:>4} {:>4}  {:>4} {:>7} {:>4}  {:<8} {}",
            trace.iteration,
            branch,
            trace.retrieved,
            trace.newly_labeled,
            trace.pool_size,
            trace.tally.full,
            trace.tally.partial,
            trace.tally.none,
            trace.verified,
            trace.support_ids.join(",")
        );
    }
    if let Some(answer) = &result.answer {
        println!("statements: {}", answer.statements.len());
        for statement in &answer.statements {
            println!("  - {} [{}]", statement.text, statement.citations.join(","));
        }
    }
    Ok(ExitCode::SUCCESS)
}

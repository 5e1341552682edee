//! `alignrag` — operator front end for the iterative grounded-alignment
//! retrieval pipeline: ingest a corpus, answer queries, score results,
//! and inspect per-iteration traces.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{EvalInputs, OracleKind, RunInputs};
use config::{ConfigFlags, Effective, FileConfig};

/// Iterative grounded-alignment retrieval over a local corpus.
#[derive(Parser)]
#[command(name = "alignrag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a JSONL corpus and persist a searchable index artifact.
    Ingest {
        /// Corpus file: one {"id", "title", "text"} object per line.
        #[arg(long, value_name = "PATH")]
        corpus: PathBuf,
        /// Where to write the index artifact.
        #[arg(long, value_name = "PATH")]
        index: PathBuf,
    },
    /// Answer queries with the retrieve → align → update loop.
    Run(RunArgs),
    /// Score run results against gold records.
    Eval(EvalArgs),
    /// Pretty-print the per-iteration trace of one run result.
    Trace {
        /// A run result JSON file produced by `run`.
        result: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// The question to answer (or use --queries).
    query: Option<String>,
    /// File with one query per line.
    #[arg(long, value_name = "PATH", conflicts_with = "query")]
    queries: Option<PathBuf>,
    /// Index artifact produced by `ingest`.
    #[arg(long, value_name = "PATH")]
    index: Option<PathBuf>,
    /// Ingest this corpus directly instead of using --index.
    #[arg(long, value_name = "PATH", conflicts_with = "index")]
    corpus: Option<PathBuf>,
    /// Document vectors (JSONL) for dense retrieval.
    #[arg(long, value_name = "PATH")]
    vectors: Option<PathBuf>,
    /// Directory for per-query result files.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of run result JSON files.
    results: PathBuf,
    /// Gold records: JSONL with query plus short_answers / gold_list / sub_claims.
    #[arg(long, value_name = "PATH")]
    gold: PathBuf,
    /// Where to write the aggregate report.
    #[arg(long, value_name = "PATH", default_value = "eval_report.json")]
    out: PathBuf,
    /// Entailment oracle for citation scoring: substring or llm.
    #[arg(long, default_value = "substring")]
    oracle: String,
    /// Split statement texts on commas when matching list answers.
    #[arg(long)]
    comma_split: bool,
    /// Cap the list-recall denominator at five gold entities.
    #[arg(long)]
    recall_cap: bool,
    /// JSON config file (backend settings for --oracle llm).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Chat backend for --oracle llm: mock or http.
    #[arg(long)]
    backend: Option<String>,
    /// Fixture file (JSON) steering the mock backend.
    #[arg(long = "mock-fixtures", value_name = "PATH")]
    mock_fixtures: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { corpus, index } => commands::cmd_ingest(&corpus, &index),
        Command::Run(args) => {
            let file = FileConfig::load(args.flags.config.as_deref())?;
            let effective = Effective::resolve(&file, &args.flags)?;
            let inputs = RunInputs {
                query: args.query,
                queries_file: args.queries,
                corpus: args.corpus,
                index: args.index,
                vectors: args.vectors,
                out_dir: args.out,
            };
            commands::cmd_run(&inputs, &effective)
        }
        Command::Eval(args) => {
            let file = FileConfig::load(args.config.as_deref())?;
            let flags = ConfigFlags {
                backend: args.backend.clone(),
                mock_fixtures: args.mock_fixtures.clone(),
                ..ConfigFlags::default()
            };
            let effective = Effective::resolve(&file, &flags)?;
            let oracle = match args.oracle.as_str() {
                "substring" => OracleKind::Substring,
                "llm" => OracleKind::Llm,
                other => anyhow::bail!("unknown oracle: {other} (expected substring or llm)"),
            };
            let inputs = EvalInputs {
                results_dir: args.results,
                gold: args.gold,
                out: args.out,
                oracle,
                comma_split: args.comma_split,
                recall_cap: args.recall_cap,
            };
            commands::cmd_eval(&inputs, &effective)
        }
        Command::Trace { result } => commands::cmd_trace(&result),
    }
}

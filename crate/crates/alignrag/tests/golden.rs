//! End-to-end runs over a small frozen corpus, checked down to the byte.
//!
//! Two scripted queries exercise the two main loop shapes: one answered by a
//! directly retrievable document on the first pass, one that only succeeds
//! after a low-alignment iteration rewrites and expands the query. The
//! summary JSON for each run is compared byte-for-byte against a committed
//! golden file; run with `UPDATE_GOLDENS=1` to regenerate after an intended
//! change.

use alignrag::aligner::Role;
use alignrag::corpus::Corpus;
use alignrag::gateway::{Gateway, GatewayConfig, MockLlmBackend};
use alignrag::pipeline::{Pipeline, PipelineConfig, RunResult, Statement};
use alignrag::query_update::UpdateBranch;
use alignrag::retriever::InvertedIndex;
use alignrag::taxonomy::AlignmentLabel;
use std::path::{Path, PathBuf};

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(query: &str) -> RunResult {
    let corpus = Corpus::ingest_jsonl(fixture_path("corpus.jsonl")).expect("corpus fixture");
    let index = InvertedIndex::build(&corpus);
    let backend = MockLlmBackend::from_file(fixture_path("fixtures.json")).expect("mock fixture");
    let gateway = Gateway::new(Box::new(backend), GatewayConfig::default());
    let pipeline =
        Pipeline::new(&corpus, &index, &gateway, PipelineConfig::default()).expect("pipeline");
    pipeline.run_query(query).expect("run")
}

fn assert_matches_golden(name: &str, rendered: &str) {
    let path = fixture_path(name);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::write(&path, rendered).expect("write golden");
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden {name}; run with UPDATE_GOLDENS=1"));
    assert_eq!(
        rendered, expected,
        "summary for {name} drifted; run with UPDATE_GOLDENS=1 if intended"
    );
}

#[test]
fn founder_query_verifies_on_the_first_pass() {
    let result = run("Who founded Acme?");

    assert_eq!(result.iterations_used, 1);
    assert!(result.verified());
    assert!(!result.degraded);
    assert_eq!(result.docs_retrieved_total, 1);
    assert_eq!(result.support.ids(), ["d1"]);
    assert_eq!(
        result.answer.as_ref().unwrap().statements,
        [Statement {
            text: "John Marble".to_string(),
            citations: vec!["d1".to_string()],
        }]
    );

    let trace = &result.iteration_traces[0];
    assert!(trace.update.is_none(), "first pass never updates the query");
    assert_eq!(trace.query_used, "Who founded Acme?");
    assert_eq!(trace.support_labels, [AlignmentLabel::FullAlignment]);
    assert_eq!(result.label_tally.full, 1);
    assert_eq!(result.label_tally.total(), 1);

    assert_matches_golden("golden_founded.json", &result.external_json());
}

#[test]
fn acquisition_query_verifies_after_one_pseudo_document_update() {
    let result = run("Which company acquired Globex?");

    assert_eq!(result.iterations_used, 2);
    assert!(result.verified());
    assert!(!result.degraded);
    // Two candidates on each pass: {d6, d5} first, {d7, d6} after the update.
    assert_eq!(result.docs_retrieved_total, 4);
    assert_eq!(result.support.ids(), ["d7", "d6", "d5"]);
    assert_eq!(
        result.answer.as_ref().unwrap().statements,
        [Statement {
            text: "Initech".to_string(),
            citations: vec!["d7".to_string()],
        }]
    );

    let first = &result.iteration_traces[0];
    assert!(first.update.is_none());
    assert_eq!(first.query_used, "Which company acquired Globex?");
    assert_eq!(first.retrieved, 2);
    assert_eq!(first.support_ids, ["d6", "d5"]);
    assert!(!first.verified);
    assert_eq!(first.tally.partial, 1);
    assert_eq!(first.tally.none, 1);

    let second = &result.iteration_traces[1];
    let update = second.update.as_ref().expect("low alignment forces an update");
    assert_eq!(update.branch, UpdateBranch::Pseudo);
    assert_eq!(update.ratio, 1.0 / 3.0);
    assert_eq!(update.tau, 0.8);
    // The rewrite replaces only the two components d6 failed to ground, and
    // the pseudo document appends the predicate's accepted variant.
    assert_eq!(
        update.updated_q,
        "what firm acquired the toy conglomerate? \
         what firm acquired purchased the toy conglomerate"
    );
    assert_eq!(second.query_used, update.updated_q);
    assert_eq!(second.retrieved, 2);
    assert_eq!(second.newly_labeled, 1);
    assert_eq!(second.support_ids, ["d7", "d6", "d5"]);
    assert_eq!(
        second.support_labels,
        [
            AlignmentLabel::PartialAlignment,
            AlignmentLabel::PartialAlignment,
            AlignmentLabel::NoAlignment,
        ]
    );
    assert!(second.verified);

    assert_matches_golden("golden_acquired.json", &result.external_json());
}

#[test]
fn the_two_runs_only_consult_the_scripted_decompositions() {
    // Guard the fixture itself: the decomposition the runs rely on.
    let backend = MockLlmBackend::from_file(fixture_path("fixtures.json")).expect("mock fixture");
    let gateway = Gateway::new(Box::new(backend), GatewayConfig::default());
    let components =
        alignrag::aligner::decompose("Which company acquired Globex?", &gateway).expect("decompose");
    assert_eq!(components.get(Role::Subject), Some("Which company"));
    assert_eq!(components.get(Role::Predicate), Some("acquired"));
    assert_eq!(components.get(Role::Object), Some("Globex"));
    assert_eq!(components.present_count(), 3);
}

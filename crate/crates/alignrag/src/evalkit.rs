//! Answer and citation quality metrics.
//!
//! Correctness is scored against gold records (short-answer alias sets,
//! entity lists, or sub-claims); verifiability is scored by checking that
//! each statement is entailed by the documents it cites. Entailment is a
//! pluggable oracle: a pure normalized-substring check for deterministic
//! tests, or a model-judged variant for real runs.
//!
//! Conventions frozen here: statements without citations count in the
//! citation-recall denominator with score 0, and a citation is precise iff
//! it entails its statement alone or the statement's other citations do not.

use crate::gateway::{call_with_reparse, Gateway, GatewayError, TemplateName};
use crate::pipeline::CitedAnswer;
use crate::rerank_select::SupportSet;
use crate::taxonomy::LabelTally;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold record lacks required field {0}")]
    MissingGoldField(&'static str),
    #[error("citation {0} is not in the support set")]
    UnresolvedCitation(String),
    #[error("invalid label tally: {0}")]
    InvalidTally(String),
    #[error("gold file line {0}: {1}")]
    MalformedLine(usize, String),
    #[error("failed to read gold file: {0}")]
    Io(#[from] std::io::Error),
    #[error("entailment backend failed: {0}")]
    Backend(#[from] GatewayError),
}

/// Canonical form for fuzzy text matching: lowercase, strip everything that
/// is neither alphanumeric nor whitespace, collapse runs of whitespace to
/// one space, trim.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            for lower in c.to_lowercase() {
                out.push(lower);
            }
        }
    }
    out
}

/// Gold data for one query. At least one of the three answer shapes is
/// populated: alias sets of short answers, a flat entity list, or sub-claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_answers: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_list: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_claims: Option<Vec<String>>,
}

/// Load gold records from JSONL. Blank lines are skipped; each record needs
/// a non-empty query and at least one populated answer shape, and alias
/// sets, when present, must be non-empty.
pub fn load_gold<P: AsRef<Path>>(path: P) -> Result<Vec<GoldRecord>, EvalError> {
    let content = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: GoldRecord = serde_json::from_str(line)
            .map_err(|e| EvalError::MalformedLine(line_no, e.to_string()))?;
        if record.query.trim().is_empty() {
            return Err(EvalError::MalformedLine(line_no, "empty query".into()));
        }
        let has_short = record.short_answers.as_ref().is_some_and(|s| !s.is_empty());
        let has_list = record.gold_list.as_ref().is_some_and(|l| !l.is_empty());
        let has_claims = record.sub_claims.as_ref().is_some_and(|c| !c.is_empty());
        if !has_short && !has_list && !has_claims {
            return Err(EvalError::MalformedLine(
                line_no,
                "record has no short_answers, gold_list, or sub_claims".into(),
            ));
        }
        if let Some(sets) = &record.short_answers {
            if sets.iter().any(|set| set.is_empty()) {
                return Err(EvalError::MalformedLine(
                    line_no,
                    "short_answers contains an empty alias set".into(),
                ));
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Decides whether a premise text entails a hypothesis.
pub trait EntailmentOracle {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, EvalError>;
}

/// Pure, deterministic entailment: the normalized hypothesis occurs in the
/// normalized premise. An empty hypothesis entails nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubstringOracle;

impl EntailmentOracle for SubstringOracle {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, EvalError> {
        let hypothesis = normalize(hypothesis);
        if hypothesis.is_empty() {
            return Ok(false);
        }
        Ok(normalize(premise).contains(&hypothesis))
    }
}

/// Model-judged entailment via the gateway's yes/no entailment prompt.
pub struct LlmOracle<'a> {
    gateway: &'a Gateway,
}

impl<'a> LlmOracle<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        LlmOracle { gateway }
    }
}

impl EntailmentOracle for LlmOracle<'_> {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool, EvalError> {
        let verdict = call_with_reparse(
            self.gateway,
            TemplateName::Entail,
            &[("premise", premise), ("hypothesis", hypothesis)],
            |reply| match reply.trim().to_lowercase().as_str() {
                "yes" => Ok(true),
                "no" => Ok(false),
                other => Err(format!("expected yes or no, got {other:?}")),
            },
        )?;
        Ok(verdict)
    }
}

/// Precision/recall/F1 triple. F1 is 0 whenever either component is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn answer_text(answer: &CitedAnswer) -> String {
    answer
        .statements
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Fraction of alias sets with at least one alias occurring in the
/// normalized answer text.
pub fn em_recall(answer: &CitedAnswer, gold: &GoldRecord) -> Result<f64, EvalError> {
    let sets = gold
        .short_answers
        .as_ref()
        .filter(|s| !s.is_empty())
        .ok_or(EvalError::MissingGoldField("short_answers"))?;
    let text = normalize(&answer_text(answer));
    let hits = sets
        .iter()
        .filter(|aliases| {
            aliases.iter().any(|alias| {
                let alias = normalize(alias);
                !alias.is_empty() && text.contains(&alias)
            })
        })
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

/// How the answer's statements become a predicted entity list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Split statement texts on commas into several entities.
    #[serde(default)]
    pub comma_split: bool,
    /// Cap the list-recall denominator at 5 gold entities.
    #[serde(default)]
    pub recall_cap: bool,
}

/// Set-based precision/recall/F1 of the predicted entity list against the
/// gold list, over normalized entities. An empty prediction scores 0.
pub fn list_f1(
    answer: &CitedAnswer,
    gold: &GoldRecord,
    config: &EvalConfig,
) -> Result<Prf, EvalError> {
    let gold_list = gold
        .gold_list
        .as_ref()
        .filter(|l| !l.is_empty())
        .ok_or(EvalError::MissingGoldField("gold_list"))?;
    let mut pred: HashSet<String> = HashSet::new();
    for statement in &answer.statements {
        if config.comma_split {
            for part in statement.text.split(',') {
                let entity = normalize(part);
                if !entity.is_empty() {
                    pred.insert(entity);
                }
            }
        } else {
            let entity = normalize(&statement.text);
            if !entity.is_empty() {
                pred.insert(entity);
            }
        }
    }
    let gold_set: HashSet<String> = gold_list
        .iter()
        .map(|g| normalize(g))
        .filter(|g| !g.is_empty())
        .collect();
    let matched = pred.intersection(&gold_set).count();
    let precision = if pred.is_empty() {
        0.0
    } else {
        matched as f64 / pred.len() as f64
    };
    let denominator = if config.recall_cap {
        gold_set.len().min(5)
    } else {
        gold_set.len()
    };
    let recall = if denominator == 0 {
        0.0
    } else {
        // A capped denominator can exceed 1; clamp to keep recall a rate.
        (matched as f64 / denominator as f64).min(1.0)
    };
    Ok(Prf::new(precision, recall))
}

/// Fraction of gold sub-claims entailed by the full answer text.
pub fn claim_recall(
    answer: &CitedAnswer,
    gold: &GoldRecord,
    oracle: &dyn EntailmentOracle,
) -> Result<f64, EvalError> {
    let claims = gold
        .sub_claims
        .as_ref()
        .filter(|c| !c.is_empty())
        .ok_or(EvalError::MissingGoldField("sub_claims"))?;
    let text = answer_text(answer);
    let mut hits = 0usize;
    for claim in claims {
        if oracle.entails(&text, claim)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / claims.len() as f64)
}

/// Citation quality. Recall: a statement scores 1 iff the concatenation of
/// its cited documents entails it; statements without citations score 0 and
/// stay in the denominator. Precision: a citation is precise iff it entails
/// its statement alone, or the statement's remaining citations do not.
pub fn citation_scores(
    answer: &CitedAnswer,
    support: &SupportSet,
    oracle: &dyn EntailmentOracle,
) -> Result<Prf, EvalError> {
    let text_of = |id: &str| -> Result<&str, EvalError> {
        support
            .docs
            .iter()
            .find(|d| d.doc_id == id)
            .map(|d| d.text.as_str())
            .ok_or_else(|| EvalError::UnresolvedCitation(id.to_string()))
    };

    let mut recall_sum = 0.0;
    let mut precise = 0usize;
    let mut total_citations = 0usize;
    for statement in &answer.statements {
        if statement.citations.is_empty() {
            continue; // scores 0, still counted in the denominator below
        }
        let mut cited_texts = Vec::with_capacity(statement.citations.len());
        for id in &statement.citations {
            cited_texts.push(text_of(id)?);
        }
        if oracle.entails(&cited_texts.join(" "), &statement.text)? {
            recall_sum += 1.0;
        }
        for (i, id) in statement.citations.iter().enumerate() {
            total_citations += 1;
            if oracle.entails(text_of(id)?, &statement.text)? {
                precise += 1;
                continue;
            }
            let others: Vec<&str> = cited_texts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, t)| *t)
                .collect();
            if !oracle.entails(&others.join(" "), &statement.text)? {
                precise += 1;
            }
        }
    }
    let recall = if answer.statements.is_empty() {
        0.0
    } else {
        recall_sum / answer.statements.len() as f64
    };
    let precision = if total_citations == 0 {
        0.0
    } else {
        precise as f64 / total_citations as f64
    };
    Ok(Prf::new(precision, recall))
}

/// Counts and conversion rate for one alignment label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStat {
    pub count_all: u64,
    pub count_final: u64,
    pub conversion_rate: f64,
}

/// Per-label statistics: how often documents of each label, seen across all
/// iterations, end up in final support sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub full: LabelStat,
    pub partial: LabelStat,
    pub none: LabelStat,
}

fn label_stat(name: &str, all: u64, final_count: u64) -> Result<LabelStat, EvalError> {
    if final_count > all {
        return Err(EvalError::InvalidTally(format!(
            "{name}: final count {final_count} exceeds total {all}"
        )));
    }
    let conversion_rate = if all == 0 {
        0.0
    } else {
        final_count as f64 / all as f64
    };
    Ok(LabelStat {
        count_all: all,
        count_final: final_count,
        conversion_rate,
    })
}

/// Conversion rates per label. Rates keep full precision; round only when
/// reporting.
pub fn label_conversion(all: &LabelTally, final_: &LabelTally) -> Result<LabelStats, EvalError> {
    Ok(LabelStats {
        full: label_stat("full", all.full, final_.full)?,
        partial: label_stat("partial", all.partial, final_.partial)?,
        none: label_stat("none", all.none, final_.none)?,
    })
}

/// Round to two decimals for report output.
pub fn round2(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

/// All applicable scores for one (answer, gold) pair: correctness metrics
/// are computed only when the gold record carries their field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordScores {
    pub query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list_f1: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim_recall: Option<f64>,
    pub citation: Prf,
}

/// Score one answer against its gold record.
pub fn score_record(
    answer: &CitedAnswer,
    support: &SupportSet,
    gold: &GoldRecord,
    oracle: &dyn EntailmentOracle,
    config: &EvalConfig,
) -> Result<RecordScores, EvalError> {
    let has = |opt: &Option<Vec<_>>| opt.as_ref().is_some_and(|v| !v.is_empty());
    let em = if gold.short_answers.as_ref().is_some_and(|s| !s.is_empty()) {
        Some(em_recall(answer, gold)?)
    } else {
        None
    };
    let list = if has(&gold.gold_list) {
        Some(list_f1(answer, gold, config)?)
    } else {
        None
    };
    let claims = if has(&gold.sub_claims) {
        Some(claim_recall(answer, gold, oracle)?)
    } else {
        None
    };
    Ok(RecordScores {
        query: gold.query.clone(),
        em_recall: em,
        list_f1: list,
        claim_recall: claims,
        citation: citation_scores(answer, support, oracle)?,
    })
}

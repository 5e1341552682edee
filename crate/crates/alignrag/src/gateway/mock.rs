//! Deterministic stand-in for a live model.
//!
//! The mock reads the same rendered prompts a real endpoint would receive,
//! dispatches on the template's first line, and produces replies in the
//! exact formats the templates request. Behavior is driven entirely by a
//! fixture file, so full runs are reproducible offline.

use super::templates::{extract_section, first_line, TemplateName};
use super::{ChatBackend, ChatRequest, GatewayError};
use crate::corpus::tokenize;
use crate::evalkit::normalize;
use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;

const ROLE_NAMES: [&str; 8] = [
    "subject",
    "predicate",
    "object",
    "predicative",
    "attributive",
    "adverbial",
    "complement",
    "apposition",
];

fn default_window() -> usize {
    8
}

/// Everything the mock knows, loaded from one JSON file.
///
/// * `decompositions` — question → role → span. Questions not listed fall
///   back to treating the whole question as the subject.
/// * `synonyms` — phrase → acceptable rewrites, first entry preferred.
/// * `window` — token window width used when judging whether a phrase's
///   tokens co-occur in a document.
/// * `golds` — question → strings that must appear in the support texts
///   for verification to pass; also used to write cited answers.
#[derive(Debug, Clone, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub decompositions: HashMap<String, HashMap<String, String>>,
    #[serde(default)]
    pub synonyms: HashMap<String, Vec<String>>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub golds: HashMap<String, Vec<String>>,
}

impl Default for MockFixture {
    fn default() -> Self {
        Self {
            decompositions: HashMap::new(),
            synonyms: HashMap::new(),
            window: default_window(),
            golds: HashMap::new(),
        }
    }
}

impl MockFixture {
    pub fn from_file<P: AsRef<Path>>(path: P) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

pub struct MockLlmBackend {
    fixture: MockFixture,
}

impl MockLlmBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture }
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> std::io::Result<Self> {
        Ok(Self::new(MockFixture::from_file(path)?))
    }

    fn section<'a>(&self, prompt: &'a str, name: &str) -> Result<&'a str, GatewayError> {
        extract_section(prompt, name)
            .ok_or_else(|| GatewayError::Unscripted(format!("prompt lacks section {name}")))
    }

    /// The phrase itself plus any fixture synonyms, exact key first, then a
    /// lowercase-key fallback.
    fn variants(&self, phrase: &str) -> Vec<String> {
        let mut out = vec![phrase.to_string()];
        let table = &self.fixture.synonyms;
        let entry = table
            .get(phrase)
            .or_else(|| table.get(phrase.to_lowercase().as_str()));
        if let Some(list) = entry {
            out.extend(list.iter().cloned());
        }
        out
    }

    /// A phrase counts as stated when all of some variant's tokens occur
    /// inside one `window`-token stretch of the document. The returned
    /// evidence is the variant, when it also appears verbatim.
    fn judge(&self, span: &str, document: &str, window: usize) -> (bool, Option<String>) {
        let doc_tokens = tokenize(document);
        let doc_lower = document.to_lowercase();
        for variant in self.variants(span) {
            let needed = tokenize(&variant);
            if needed.is_empty() {
                continue;
            }
            if tokens_within_window(&needed, &doc_tokens, window) {
                let evidence = doc_lower
                    .contains(&variant.to_lowercase())
                    .then(|| variant.clone());
                return (true, evidence);
            }
        }
        (false, None)
    }

    fn decompose(&self, prompt: &str) -> Result<String, GatewayError> {
        let question = self.section(prompt, "QUERY")?.trim();
        let fallback: HashMap<String, String> =
            [("subject".to_string(), question.to_string())].into();
        let spans = self
            .fixture
            .decompositions
            .get(question)
            .unwrap_or(&fallback);
        let lines: Vec<String> = ROLE_NAMES
            .iter()
            .map(|role| match spans.get(*role) {
                Some(span) if !span.trim().is_empty() => format!("{role}: {span}"),
                _ => format!("{role}: none"),
            })
            .collect();
        Ok(lines.join("\n"))
    }

    fn align_like(&self, prompt: &str, window: usize) -> Result<String, GatewayError> {
        let components = parse_component_lines(self.section(prompt, "COMPONENTS")?);
        let document = self.section(prompt, "DOCUMENT")?;
        let prior_yes: Vec<String> = extract_section(prompt, "VERDICTS")
            .map(|body| {
                parse_component_lines(body)
                    .into_iter()
                    .filter(|(_, verdict)| {
                        verdict == "yes" || verdict.starts_with("yes |") || verdict.starts_with("yes|")
                    })
                    .map(|(role, _)| role)
                    .collect()
            })
            .unwrap_or_default();
        let lines: Vec<String> = components
            .iter()
            .map(|(role, span)| {
                let (hit, evidence) = self.judge(span, document, window);
                let aligned = hit || prior_yes.iter().any(|r| r == role);
                match (aligned, evidence) {
                    (true, Some(ev)) => format!("{role}: yes | {ev}"),
                    (true, None) => format!("{role}: yes"),
                    (false, _) => format!("{role}: no"),
                }
            })
            .collect();
        Ok(lines.join("\n"))
    }

    fn synonym(&self, prompt: &str) -> Result<String, GatewayError> {
        let components = parse_component_lines(self.section(prompt, "COMPONENTS")?);
        let lines: Vec<String> = components
            .iter()
            .map(|(role, span)| {
                let replacement = self
                    .fixture
                    .synonyms
                    .get(span)
                    .or_else(|| self.fixture.synonyms.get(span.to_lowercase().as_str()))
                    .and_then(|list| list.first())
                    .cloned()
                    .unwrap_or_else(|| span.clone());
                format!("{role}: {replacement}")
            })
            .collect();
        Ok(lines.join("\n"))
    }

    fn pseudo_doc(&self, prompt: &str) -> Result<String, GatewayError> {
        let components = parse_component_lines(self.section(prompt, "COMPONENTS")?);
        let mut phrases: Vec<String> = Vec::new();
        for (_, span) in &components {
            let mut candidates = vec![span.clone()];
            if let Some(list) = self
                .fixture
                .synonyms
                .get(span)
                .or_else(|| self.fixture.synonyms.get(span.to_lowercase().as_str()))
            {
                candidates.extend(list.iter().cloned());
            }
            for phrase in candidates {
                if !phrases.contains(&phrase) {
                    phrases.push(phrase);
                }
            }
        }
        Ok(phrases.join(" "))
    }

    fn select(&self, prompt: &str) -> Result<String, GatewayError> {
        let count: usize = self
            .section(prompt, "COUNT")?
            .trim()
            .parse()
            .map_err(|_| GatewayError::Unscripted("unreadable COUNT section".into()))?;
        let docs_body = self.section(prompt, "DOCS")?;
        let mut rows: Vec<DocRow> = docs_body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(parse_doc_row)
            .collect::<Result<_, _>>()?;
        rows.sort_by(|a, b| {
            label_rank(&a.label)
                .cmp(&label_rank(&b.label))
                .then_with(|| b.score.total_cmp(&a.score))
                .then_with(|| a.id.cmp(&b.id))
        });
        let chosen: Vec<&str> = rows.iter().take(count).map(|r| r.id.as_str()).collect();
        Ok(format!("chosen: {}", chosen.join(", ")))
    }

    fn verify(&self, prompt: &str) -> Result<String, GatewayError> {
        let question = self.section(prompt, "QUERY")?.trim();
        let docs = self.section(prompt, "DOCS")?.to_lowercase();
        let verdict = match self.fixture.golds.get(question) {
            Some(golds) if !golds.is_empty() => golds
                .iter()
                .all(|gold| docs.contains(&gold.to_lowercase())),
            _ => false,
        };
        Ok(if verdict { "yes" } else { "no" }.to_string())
    }

    fn generate(&self, prompt: &str) -> Result<String, GatewayError> {
        let question = self.section(prompt, "QUERY")?.trim();
        let docs_body = self.section(prompt, "DOCS")?;
        let numbered: Vec<(usize, String)> = docs_body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(parse_numbered_doc)
            .collect();
        let mut lines = Vec::new();
        if let Some(golds) = self.fixture.golds.get(question) {
            for gold in golds {
                let gold_lower = gold.to_lowercase();
                if let Some((n, _)) = numbered
                    .iter()
                    .find(|(_, text)| text.to_lowercase().contains(&gold_lower))
                {
                    lines.push(format!("{gold} [{n}]"));
                }
            }
        }
        if lines.is_empty() {
            Ok("none".to_string())
        } else {
            Ok(lines.join("\n"))
        }
    }

    fn entail(&self, prompt: &str) -> Result<String, GatewayError> {
        let premise = normalize(self.section(prompt, "PREMISE")?);
        let hypothesis = normalize(self.section(prompt, "HYPOTHESIS")?);
        let verdict = !hypothesis.is_empty() && premise.contains(&hypothesis);
        Ok(if verdict { "yes" } else { "no" }.to_string())
    }
}

impl ChatBackend for MockLlmBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let prompt = request.last_user_content();
        let head = prompt.lines().next().unwrap_or("");
        if head == first_line(TemplateName::Decompose) {
            self.decompose(prompt)
        } else if head == first_line(TemplateName::Align) {
            self.align_like(prompt, self.fixture.window)
        } else if head == first_line(TemplateName::Reflect) {
            self.align_like(prompt, self.fixture.window + 2)
        } else if head == first_line(TemplateName::Synonym) {
            self.synonym(prompt)
        } else if head == first_line(TemplateName::PseudoDoc) {
            self.pseudo_doc(prompt)
        } else if head == first_line(TemplateName::Select) {
            self.select(prompt)
        } else if head == first_line(TemplateName::Verify) {
            self.verify(prompt)
        } else if head == first_line(TemplateName::Generate) {
            self.generate(prompt)
        } else if head == first_line(TemplateName::Entail) {
            self.entail(prompt)
        } else {
            Err(GatewayError::Unscripted(format!(
                "unrecognized instruction: {head}"
            )))
        }
    }
}

/// True when every token in `needed` occurs somewhere inside one
/// `window`-token slice of `haystack`.
fn tokens_within_window(needed: &[String], haystack: &[String], window: usize) -> bool {
    if needed.is_empty() || haystack.is_empty() || window == 0 {
        return false;
    }
    for start in 0..haystack.len() {
        let end = (start + window).min(haystack.len());
        let slice = &haystack[start..end];
        if needed.iter().all(|t| slice.contains(t)) {
            return true;
        }
    }
    false
}

/// Parse `role: value` lines, preserving order. Lines without a colon are
/// skipped.
fn parse_component_lines(body: &str) -> Vec<(String, String)> {
    body.lines()
        .filter_map(|line| {
            let (role, value) = line.split_once(':')?;
            Some((role.trim().to_string(), value.trim().to_string()))
        })
        .collect()
}

struct DocRow {
    id: String,
    label: String,
    score: f64,
}

/// Parse `- id={id} label={label} score={score} | {text}` listing rows.
fn parse_doc_row(line: &str) -> Result<DocRow, GatewayError> {
    let bad = || GatewayError::Unscripted(format!("unreadable doc row: {line}"));
    let rest = line.trim_start().strip_prefix("- ").ok_or_else(bad)?;
    let (meta, _text) = rest.split_once(" | ").ok_or_else(bad)?;
    let mut id = None;
    let mut label = None;
    let mut score = None;
    for field in meta.split_whitespace() {
        if let Some((key, value)) = field.split_once('=') {
            match key {
                "id" => id = Some(value.to_string()),
                "label" => label = Some(value.to_string()),
                "score" => score = value.parse::<f64>().ok(),
                _ => {}
            }
        }
    }
    Ok(DocRow {
        id: id.ok_or_else(bad)?,
        label: label.ok_or_else(bad)?,
        score: score.ok_or_else(bad)?,
    })
}

/// Parse `[{n}] id={id} | {text}` answer-context rows into (n, text).
fn parse_numbered_doc(line: &str) -> Option<(usize, String)> {
    let rest = line.trim_start().strip_prefix('[')?;
    let (n, rest) = rest.split_once(']')?;
    let n: usize = n.trim().parse().ok()?;
    let (_, text) = rest.split_once(" | ")?;
    Some((n, text.to_string()))
}

fn label_rank(label: &str) -> u8 {
    match label {
        "full" => 0,
        "partial" => 1,
        "none" => 2,
        _ => 3,
    }
}

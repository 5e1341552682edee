//! Fine-grained alignment of a query against candidate documents.
//!
//! A query is decomposed once into up to eight syntactic components; each
//! candidate document is then judged per component (align), re-judged with
//! the first verdicts visible (reflect), and the still-unmatched components
//! are rewritten with document-friendly synonyms to form the rewritten
//! query. All judgments go through the gateway, so the same code path
//! serves both the live model and the deterministic mock.

use crate::corpus::Document;
use crate::gateway::{call_with_reparse, Gateway, GatewayError, TemplateName};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("alignment backend failed: {0}")]
    Backend(#[from] GatewayError),
}

/// The eight syntactic roles a query decomposes into.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Subject,
    Predicate,
    Object,
    Predicative,
    Attributive,
    Adverbial,
    Complement,
    Apposition,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::Subject,
        Role::Predicate,
        Role::Object,
        Role::Predicative,
        Role::Attributive,
        Role::Adverbial,
        Role::Complement,
        Role::Apposition,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Subject => "subject",
            Role::Predicate => "predicate",
            Role::Object => "object",
            Role::Predicative => "predicative",
            Role::Attributive => "attributive",
            Role::Adverbial => "adverbial",
            Role::Complement => "complement",
            Role::Apposition => "apposition",
        }
    }

    /// Case-insensitive role-name lookup.
    pub fn parse(name: &str) -> Option<Role> {
        let lower = name.trim().to_lowercase();
        Role::ALL.into_iter().find(|r| r.as_str() == lower)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A query's components: at most one span per role, roles in fixed order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyntacticComponents {
    spans: [Option<String>; 8],
}

impl SyntacticComponents {
    pub fn from_pairs(pairs: &[(Role, &str)]) -> Self {
        let mut out = Self::default();
        for (role, span) in pairs {
            out.set(*role, Some(span.to_string()));
        }
        out
    }

    pub fn set(&mut self, role: Role, span: Option<String>) {
        let span = span.map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
        self.spans[role as usize] = span;
    }

    pub fn get(&self, role: Role) -> Option<&str> {
        self.spans[role as usize].as_deref()
    }

    /// Present components in role order.
    pub fn present(&self) -> impl Iterator<Item = (Role, &str)> {
        Role::ALL
            .into_iter()
            .filter_map(|role| self.get(role).map(|span| (role, span)))
    }

    pub fn present_roles(&self) -> Vec<Role> {
        self.present().map(|(role, _)| role).collect()
    }

    pub fn present_count(&self) -> usize {
        self.present().count()
    }
}

/// Which components a document grounds, with evidence spans when the
/// verdict came with one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentSet {
    pub aligned: BTreeSet<Role>,
    pub evidence: BTreeMap<Role, String>,
}

impl AlignmentSet {
    pub fn count(&self) -> usize {
        self.aligned.len()
    }
}

/// The query with unmatched components replaced by synonyms. The
/// replacement map holds only substitutions that actually changed the
/// phrase, so `rendered == original` exactly when it is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewrittenQuery {
    pub original: String,
    pub replacements: BTreeMap<Role, String>,
    pub rendered: String,
}

/// One `role: span` line per listed role.
pub(crate) fn components_block<'a>(pairs: impl Iterator<Item = (Role, &'a str)>) -> String {
    pairs
        .map(|(role, span)| format!("{role}: {span}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Split the query into its syntactic components. The decomposition is
/// computed once per query; later iterations keep judging these same
/// components.
pub fn decompose(query: &str, gateway: &Gateway) -> Result<SyntacticComponents, AlignError> {
    if query.trim().is_empty() {
        return Err(AlignError::EmptyQuery);
    }
    let components = call_with_reparse(
        gateway,
        TemplateName::Decompose,
        &[("query", query)],
        parse_decomposition,
    )?;
    Ok(components)
}

fn parse_decomposition(reply: &str) -> Result<SyntacticComponents, String> {
    let mut seen: BTreeSet<Role> = BTreeSet::new();
    let mut out = SyntacticComponents::default();
    for line in reply.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| format!("line without role prefix: {line}"))?;
        let role = Role::parse(name).ok_or_else(|| format!("unknown role: {name}"))?;
        if !seen.insert(role) {
            return Err(format!("role listed twice: {role}"));
        }
        let value = value.trim();
        let absent = value.is_empty() || value.eq_ignore_ascii_case("none") || value == "-";
        out.set(role, (!absent).then(|| value.to_string()));
    }
    let missing: Vec<&str> = Role::ALL
        .iter()
        .filter(|r| !seen.contains(r))
        .map(|r| r.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing roles: {}", missing.join(", ")));
    }
    if out.present_count() == 0 {
        return Err("decomposition produced no components".to_string());
    }
    Ok(out)
}

/// Judge each present component against the document. Verdicts mentioning
/// roles the query does not have are rejected (and re-prompted once), so
/// `aligned ⊆ present_roles` holds by construction.
pub fn align_components(
    components: &SyntacticComponents,
    doc: &Document,
    gateway: &Gateway,
) -> Result<AlignmentSet, AlignError> {
    let block = components_block(components.present());
    let expected = components.present_roles();
    let set = call_with_reparse(
        gateway,
        TemplateName::Align,
        &[("components", block.as_str()), ("document", doc.text.as_str())],
        |reply| parse_verdicts(reply, &expected),
    )?;
    Ok(set)
}

/// Second look at the same document with the first-pass verdicts shown.
/// A live model may add or withdraw verdicts; the mock only widens its
/// search, so the first pass is always a subset of the reflection.
pub fn reflect(
    components: &SyntacticComponents,
    doc: &Document,
    first_pass: &AlignmentSet,
    gateway: &Gateway,
) -> Result<AlignmentSet, AlignError> {
    let block = components_block(components.present());
    let verdicts = components
        .present()
        .map(|(role, _)| {
            let verdict = if first_pass.aligned.contains(&role) {
                "yes"
            } else {
                "no"
            };
            format!("{role}: {verdict}")
        })
        .collect::<Vec<_>>()
        .join("\n");
    let expected = components.present_roles();
    let set = call_with_reparse(
        gateway,
        TemplateName::Reflect,
        &[
            ("components", block.as_str()),
            ("document", doc.text.as_str()),
            ("verdicts", verdicts.as_str()),
        ],
        |reply| parse_verdicts(reply, &expected),
    )?;
    Ok(set)
}

fn parse_verdicts(reply: &str, expected: &[Role]) -> Result<AlignmentSet, String> {
    let mut seen: BTreeSet<Role> = BTreeSet::new();
    let mut out = AlignmentSet::default();
    for line in reply.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| format!("line without role prefix: {line}"))?;
        let role = Role::parse(name).ok_or_else(|| format!("unknown role: {name}"))?;
        if !expected.contains(&role) {
            return Err(format!("verdict for a role the query does not have: {role}"));
        }
        if !seen.insert(role) {
            return Err(format!("role listed twice: {role}"));
        }
        let value = value.trim();
        let (verdict, evidence) = match value.split_once('|') {
            Some((v, ev)) => (v.trim(), Some(ev.trim())),
            None => (value, None),
        };
        if verdict.eq_ignore_ascii_case("yes") {
            out.aligned.insert(role);
            if let Some(ev) = evidence.filter(|e| !e.is_empty()) {
                out.evidence.insert(role, ev.to_string());
            }
        } else if !verdict.eq_ignore_ascii_case("no") {
            return Err(format!("verdict is neither yes nor no: {line}"));
        }
    }
    let missing: Vec<&str> = expected
        .iter()
        .filter(|r| !seen.contains(r))
        .map(|r| r.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing verdicts for: {}", missing.join(", ")));
    }
    Ok(out)
}

/// Rewrite the components the document failed to ground. Each unmatched
/// component gets a replacement phrase; replacements that leave the phrase
/// unchanged are dropped, and the rendered query substitutes the effective
/// ones into the original text in role order (a phrase that does not occur
/// verbatim in the query is appended instead).
pub fn synonym_rewrite(
    query: &str,
    components: &SyntacticComponents,
    reflected: &AlignmentSet,
    doc: &Document,
    gateway: &Gateway,
) -> Result<RewrittenQuery, AlignError> {
    let unaligned: Vec<(Role, &str)> = components
        .present()
        .filter(|(role, _)| !reflected.aligned.contains(role))
        .collect();
    if unaligned.is_empty() {
        return Ok(RewrittenQuery {
            original: query.to_string(),
            replacements: BTreeMap::new(),
            rendered: query.to_string(),
        });
    }
    let block = components_block(unaligned.iter().copied());
    let expected: Vec<Role> = unaligned.iter().map(|(role, _)| *role).collect();
    let phrases = call_with_reparse(
        gateway,
        TemplateName::Synonym,
        &[("components", block.as_str()), ("document", doc.text.as_str())],
        |reply| parse_synonyms(reply, &expected),
    )?;

    let mut replacements = BTreeMap::new();
    let mut rendered = query.to_string();
    for (role, span) in &unaligned {
        let phrase = &phrases[role];
        if phrase == span {
            continue;
        }
        replacements.insert(*role, phrase.clone());
        if let Some(at) = rendered.find(span) {
            rendered.replace_range(at..at + span.len(), phrase);
        } else {
            rendered.push(' ');
            rendered.push_str(phrase);
        }
    }
    Ok(RewrittenQuery {
        original: query.to_string(),
        replacements,
        rendered,
    })
}

fn parse_synonyms(reply: &str, expected: &[Role]) -> Result<BTreeMap<Role, String>, String> {
    let mut out = BTreeMap::new();
    for line in reply.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| format!("line without role prefix: {line}"))?;
        let role = Role::parse(name).ok_or_else(|| format!("unknown role: {name}"))?;
        if !expected.contains(&role) {
            return Err(format!("synonym for a role that was not requested: {role}"));
        }
        let value = value.trim();
        if value.is_empty() {
            return Err(format!("empty replacement for {role}"));
        }
        if out.insert(role, value.to_string()).is_some() {
            return Err(format!("role listed twice: {role}"));
        }
    }
    let missing: Vec<&str> = expected
        .iter()
        .filter(|r| !out.contains_key(r))
        .map(|r| r.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing synonyms for: {}", missing.join(", ")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, MockFixture, MockLlmBackend, ScriptedBackend};

    fn mock_gateway() -> Gateway {
        let fixture: MockFixture = serde_json::from_str(
            r#"{
                "decompositions": {
                    "Who founded Acme?": {
                        "subject": "Who",
                        "predicate": "founded",
                        "object": "Acme"
                    }
                },
                "synonyms": {
                    "founded": ["established"],
                    "Who": ["founder"]
                },
                "window": 8
            }"#,
        )
        .unwrap();
        Gateway::new(
            Box::new(MockLlmBackend::new(fixture)),
            GatewayConfig::default(),
        )
    }

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    #[test]
    fn decompose_reads_fixture() {
        let gw = mock_gateway();
        let c = decompose("Who founded Acme?", &gw).unwrap();
        assert_eq!(c.get(Role::Subject), Some("Who"));
        assert_eq!(c.get(Role::Predicate), Some("founded"));
        assert_eq!(c.get(Role::Object), Some("Acme"));
        assert_eq!(c.present_count(), 3);
        assert_eq!(
            c.present_roles(),
            vec![Role::Subject, Role::Predicate, Role::Object]
        );
    }

    #[test]
    fn decompose_rejects_empty_query() {
        let gw = mock_gateway();
        assert!(matches!(decompose("", &gw), Err(AlignError::EmptyQuery)));
        assert!(matches!(decompose("   ", &gw), Err(AlignError::EmptyQuery)));
    }

    #[test]
    fn decompose_unknown_query_falls_back_to_subject() {
        let gw = mock_gateway();
        let c = decompose("xyzzy plugh", &gw).unwrap();
        assert_eq!(c.get(Role::Subject), Some("xyzzy plugh"));
        assert_eq!(c.present_count(), 1);
    }

    #[test]
    fn decompose_reprompts_once_then_succeeds() {
        let backend = ScriptedBackend::new();
        backend.push(Ok("gibberish".into()));
        backend.push(Ok(
            "subject: Who\npredicate: none\nobject: none\npredicative: none\n\
             attributive: none\nadverbial: none\ncomplement: none\napposition: none"
                .into(),
        ));
        let gw = Gateway::new(Box::new(backend), GatewayConfig::default());
        let c = decompose("Who?", &gw).unwrap();
        assert_eq!(c.get(Role::Subject), Some("Who"));
        assert_eq!(gw.counters().backend_calls, 2);
    }

    #[test]
    fn decompose_two_bad_replies_is_backend_error() {
        let backend = ScriptedBackend::new();
        backend.push(Ok("gibberish".into()));
        backend.push(Ok("more gibberish".into()));
        let gw = Gateway::new(Box::new(backend), GatewayConfig::default());
        match decompose("Who?", &gw) {
            Err(AlignError::Backend(GatewayError::MalformedReply(_))) => {}
            other => panic!("expected MalformedReply, got {other:?}"),
        }
    }

    #[test]
    fn decompose_requires_all_eight_roles_in_reply() {
        let backend = ScriptedBackend::new();
        backend.push(Ok("subject: Who".into()));
        backend.push(Ok("subject: Who".into()));
        let gw = Gateway::new(Box::new(backend), GatewayConfig::default());
        assert!(matches!(
            decompose("Who?", &gw),
            Err(AlignError::Backend(GatewayError::MalformedReply(_)))
        ));
    }

    #[test]
    fn decompose_all_none_is_rejected() {
        let all_none = Role::ALL
            .iter()
            .map(|r| format!("{r}: none"))
            .collect::<Vec<_>>()
            .join("\n");
        let backend = ScriptedBackend::new();
        backend.push(Ok(all_none.clone()));
        backend.push(Ok(all_none));
        let gw = Gateway::new(Box::new(backend), GatewayConfig::default());
        assert!(matches!(
            decompose("Who?", &gw),
            Err(AlignError::Backend(GatewayError::MalformedReply(_)))
        ));
    }

    #[test]
    fn align_uses_synonym_table_and_records_evidence() {
        let gw = mock_gateway();
        let c = SyntacticComponents::from_pairs(&[(Role::Predicate, "founded")]);
        let d = doc("d1", "The firm was established long ago.");
        let set = align_components(&c, &d, &gw).unwrap();
        assert!(set.aligned.contains(&Role::Predicate));
        assert_eq!(set.evidence.get(&Role::Predicate).unwrap(), "established");
    }

    #[test]
    fn align_misses_everything_in_unrelated_doc() {
        let gw = mock_gateway();
        let c = SyntacticComponents::from_pairs(&[
            (Role::Subject, "Who"),
            (Role::Object, "Acme"),
        ]);
        let d = doc("d9", "utterly unrelated words");
        let set = align_components(&c, &d, &gw).unwrap();
        assert!(set.aligned.is_empty());
        assert!(set.evidence.is_empty());
    }

    #[test]
    fn align_rejects_verdicts_for_absent_roles() {
        let backend = ScriptedBackend::new();
        backend.push(Ok("subject: yes\napposition: yes".into()));
        backend.push(Ok("subject: yes\napposition: yes".into()));
        let gw = Gateway::new(Box::new(backend), GatewayConfig::default());
        let c = SyntacticComponents::from_pairs(&[(Role::Subject, "Who")]);
        let d = doc("d1", "text");
        assert!(matches!(
            align_components(&c, &d, &gw),
            Err(AlignError::Backend(GatewayError::MalformedReply(_)))
        ));
    }

    #[test]
    fn align_accepts_case_and_whitespace_variation() {
        let backend = ScriptedBackend::new();
        backend.push(Ok("  SUBJECT:  YES \n".into()));
        let gw = Gateway::new(Box::new(backend), GatewayConfig::default());
        let c = SyntacticComponents::from_pairs(&[(Role::Subject, "Who")]);
        let set = align_components(&c, &doc("d1", "t"), &gw).unwrap();
        assert!(set.aligned.contains(&Role::Subject));
    }

    #[test]
    fn reflect_grows_the_aligned_set() {
        let fixture: MockFixture = serde_json::from_str(r#"{"window": 2}"#).unwrap();
        let gw = Gateway::new(
            Box::new(MockLlmBackend::new(fixture)),
            GatewayConfig::default(),
        );
        let c = SyntacticComponents::from_pairs(&[(Role::Subject, "alpha gamma")]);
        // Tokens sit exactly window+1 apart: missed first, caught on the
        // wider second look.
        let d = doc("d1", "alpha beta gamma");
        let first = align_components(&c, &d, &gw).unwrap();
        assert!(first.aligned.is_empty());
        let second = reflect(&c, &d, &first, &gw).unwrap();
        assert!(second.aligned.contains(&Role::Subject));
        assert!(first.aligned.is_subset(&second.aligned));
    }

    #[test]
    fn reflect_keeps_full_first_pass() {
        let gw = mock_gateway();
        let c = SyntacticComponents::from_pairs(&[
            (Role::Predicate, "founded"),
            (Role::Object, "Acme"),
        ]);
        let d = doc("d1", "Acme was founded in 1901.");
        let first = align_components(&c, &d, &gw).unwrap();
        assert_eq!(first.count(), 2);
        let second = reflect(&c, &d, &first, &gw).unwrap();
        assert_eq!(second.aligned, first.aligned);
    }

    #[test]
    fn synonym_rewrite_replaces_unaligned_phrase() {
        let gw = mock_gateway();
        let c = SyntacticComponents::from_pairs(&[
            (Role::Subject, "Who"),
            (Role::Predicate, "founded"),
            (Role::Object, "Acme"),
        ]);
        let mut reflected = AlignmentSet::default();
        reflected.aligned.insert(Role::Subject);
        reflected.aligned.insert(Role::Object);
        let d = doc("d1", "irrelevant");
        let rq = synonym_rewrite("Who founded Acme?", &c, &reflected, &d, &gw).unwrap();
        assert_eq!(rq.original, "Who founded Acme?");
        assert_eq!(rq.rendered, "Who established Acme?");
        assert_eq!(rq.replacements.len(), 1);
        assert_eq!(rq.replacements.get(&Role::Predicate).unwrap(), "established");
    }

    #[test]
    fn synonym_rewrite_all_aligned_is_identity_without_backend_call() {
        let gw = mock_gateway();
        let c = SyntacticComponents::from_pairs(&[(Role::Subject, "Who")]);
        let mut reflected = AlignmentSet::default();
        reflected.aligned.insert(Role::Subject);
        let rq =
            synonym_rewrite("Who founded Acme?", &c, &reflected, &doc("d", "t"), &gw).unwrap();
        assert_eq!(rq.rendered, rq.original);
        assert!(rq.replacements.is_empty());
        assert_eq!(gw.counters().interactions, 0);
    }

    #[test]
    fn synonym_rewrite_without_table_entry_is_identity() {
        let gw = mock_gateway();
        let c = SyntacticComponents::from_pairs(&[(Role::Object, "Globex")]);
        let reflected = AlignmentSet::default();
        let rq = synonym_rewrite("Where is Globex?", &c, &reflected, &doc("d", "t"), &gw)
            .unwrap();
        assert_eq!(rq.rendered, "Where is Globex?");
        assert!(rq.replacements.is_empty());
    }

    #[test]
    fn synonym_rewrite_appends_phrase_missing_from_query() {
        let backend = ScriptedBackend::new();
        backend.push(Ok("subject: brand new phrase".into()));
        let gw = Gateway::new(Box::new(backend), GatewayConfig::default());
        let c = SyntacticComponents::from_pairs(&[(Role::Subject, "ghost span")]);
        let reflected = AlignmentSet::default();
        // The component span does not occur in the query text, so the
        // replacement is appended instead of substituted.
        let rq = synonym_rewrite("unrelated wording", &c, &reflected, &doc("d", "t"), &gw)
            .unwrap();
        assert_eq!(rq.rendered, "unrelated wording brand new phrase");
    }

    #[test]
    fn components_trim_and_drop_empty_spans() {
        let mut c = SyntacticComponents::default();
        c.set(Role::Subject, Some("  padded  ".into()));
        c.set(Role::Object, Some("   ".into()));
        assert_eq!(c.get(Role::Subject), Some("padded"));
        assert_eq!(c.get(Role::Object), None);
        assert_eq!(c.present_count(), 1);
    }

    #[test]
    fn role_parsing_is_case_insensitive_and_total() {
        for role in Role::ALL {
            assert_eq!(Role::parse(role.as_str()), Some(role));
            assert_eq!(Role::parse(&role.as_str().to_uppercase()), Some(role));
        }
        assert_eq!(Role::parse("verb"), None);
    }
}

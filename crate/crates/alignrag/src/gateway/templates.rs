//! Prompt templates.
//!
//! Every model interaction renders one of these templates. Each template
//! has a unique first line (deterministic backends dispatch on it) and
//! carries its inputs in `### SECTION` blocks terminated by `### END`, so
//! replies can be produced — and prompts re-parsed — without guesswork.

use super::GatewayError;
use serde::{Deserialize, Serialize};
use std::fmt;

/// The fixed set of operations the gateway knows how to prompt for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Decompose,
    Align,
    Reflect,
    Synonym,
    PseudoDoc,
    Select,
    Verify,
    Generate,
    Entail,
}

impl TemplateName {
    pub const ALL: [TemplateName; 9] = [
        TemplateName::Decompose,
        TemplateName::Align,
        TemplateName::Reflect,
        TemplateName::Synonym,
        TemplateName::PseudoDoc,
        TemplateName::Select,
        TemplateName::Verify,
        TemplateName::Generate,
        TemplateName::Entail,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateName::Decompose => "decompose",
            TemplateName::Align => "align",
            TemplateName::Reflect => "reflect",
            TemplateName::Synonym => "synonym",
            TemplateName::PseudoDoc => "pseudo_doc",
            TemplateName::Select => "select",
            TemplateName::Verify => "verify",
            TemplateName::Generate => "generate",
            TemplateName::Entail => "entail",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const DECOMPOSE: &str = "\
Break the question into grammatical components.
### QUERY
{query}
### END
Reply with exactly eight lines, one per component, in this order:
subject: <span or none>
predicate: <span or none>
object: <span or none>
predicative: <span or none>
attributive: <span or none>
adverbial: <span or none>
complement: <span or none>
apposition: <span or none>
Use the word none when the component is absent. Do not add other text.";

const ALIGN: &str = "\
Judge which question components are stated in the document.
### COMPONENTS
{components}
### END
### DOCUMENT
{document}
### END
Reply with one line per listed component, in the listed order, as either
<role>: yes | <evidence span>
<role>: yes
<role>: no
Answer yes only when the document states the component's content within one
continuous segment. Do not add other text.";

const REFLECT: &str = "\
Re-examine the component judgments against the document.
### COMPONENTS
{components}
### END
### DOCUMENT
{document}
### END
### VERDICTS
{verdicts}
### END
Reply with one line per listed component, in the listed order, as either
<role>: yes | <evidence span>
<role>: yes
<role>: no
Keep a yes verdict unless it is plainly wrong; add a yes where the earlier
pass missed support. Do not add other text.";

const SYNONYM: &str = "\
Rewrite the unmatched components with document wording.
### COMPONENTS
{components}
### END
### DOCUMENT
{document}
### END
Reply with one line per listed component, in the listed order:
<role>: <replacement phrase>
Keep the component's own words when the document offers no better phrasing.
Do not add other text.";

const PSEUDO_DOC: &str = "\
Write a short hypothetical passage that would answer the question.
### QUERY
{query}
### END
### COMPONENTS
{components}
### END
Reply with a single line of plain text and nothing else.";

const SELECT: &str = "\
Choose the documents that best support answering the question.
### QUERY
{query}
### END
### COUNT
{count}
### END
### DOCS
{docs}
### END
Reply with one line:
chosen: <id>, <id>, ...
List exactly the requested count of distinct ids drawn from the listing.
Do not add other text.";

const VERIFY: &str = "\
Decide whether the documents fully support answering the question.
### QUERY
{query}
### END
### DOCS
{docs}
### END
Reply with a single word: yes or no.";

const GENERATE: &str = "\
Answer the question using only the numbered documents, citing as you go.
### QUERY
{query}
### END
### DOCS
{docs}
### END
Reply with one statement per line, each ending with one or more citations
like [1]. Cite only listed document numbers. If the documents do not
contain an answer, reply with the single word none.";

const ENTAIL: &str = "\
Decide whether the premise entails the hypothesis.
### PREMISE
{premise}
### END
### HYPOTHESIS
{hypothesis}
### END
Reply with a single word: yes or no.";

/// The raw template text for `name`.
pub fn template_text(name: TemplateName) -> &'static str {
    match name {
        TemplateName::Decompose => DECOMPOSE,
        TemplateName::Align => ALIGN,
        TemplateName::Reflect => REFLECT,
        TemplateName::Synonym => SYNONYM,
        TemplateName::PseudoDoc => PSEUDO_DOC,
        TemplateName::Select => SELECT,
        TemplateName::Verify => VERIFY,
        TemplateName::Generate => GENERATE,
        TemplateName::Entail => ENTAIL,
    }
}

/// The template's unique first line, used to dispatch deterministic replies.
pub fn first_line(name: TemplateName) -> &'static str {
    template_text(name).lines().next().unwrap()
}

/// Fill `{slot}` placeholders in a single left-to-right pass. Inserted
/// values are emitted verbatim and never rescanned, so slot values may
/// safely contain braces. An unfilled placeholder is an error; unused
/// entries in `slots` are ignored.
pub fn render(name: TemplateName, slots: &[(&str, &str)]) -> Result<String, GatewayError> {
    let template = template_text(name);
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| GatewayError::MissingSlot("unterminated placeholder".into()))?;
        let slot = &after[..close];
        let value = slots
            .iter()
            .find(|(k, _)| *k == slot)
            .map(|(_, v)| *v)
            .ok_or_else(|| GatewayError::MissingSlot(slot.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Pull the body of a `### NAME` block out of a rendered prompt. The body
/// runs from the line after the marker to the next line starting with
/// `### `. Returns `None` when the block is absent.
pub fn extract_section<'a>(prompt: &'a str, section: &str) -> Option<&'a str> {
    let marker = format!("### {section}");
    let mut offset = 0;
    for line in prompt.split_inclusive('\n') {
        offset += line.len();
        if line.trim_end_matches(['\r', '\n']) == marker {
            let body_start = offset;
            let mut body_end = body_start;
            for body_line in prompt[body_start..].split_inclusive('\n') {
                if body_line.starts_with("### ") {
                    break;
                }
                body_end += body_line.len();
            }
            return Some(prompt[body_start..body_end].trim_end_matches(['\r', '\n']));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn first_lines_are_unique() {
        let lines: HashSet<&str> = TemplateName::ALL.iter().map(|&n| first_line(n)).collect();
        assert_eq!(lines.len(), TemplateName::ALL.len());
    }

    #[test]
    fn render_fills_slots() {
        let prompt = render(TemplateName::Verify, &[("query", "Q?"), ("docs", "body")]).unwrap();
        assert!(prompt.starts_with(first_line(TemplateName::Verify)));
        assert!(prompt.contains("### QUERY\nQ?\n### END"));
        assert!(prompt.contains("### DOCS\nbody\n### END"));
    }

    #[test]
    fn render_missing_slot_errors() {
        match render(TemplateName::Verify, &[("query", "Q?")]) {
            Err(GatewayError::MissingSlot(s)) => assert_eq!(s, "docs"),
            other => panic!("expected MissingSlot, got {other:?}"),
        }
    }

    #[test]
    fn render_does_not_rescan_inserted_values() {
        let prompt = render(
            TemplateName::Verify,
            &[("query", "{docs} is literal"), ("docs", "D")],
        )
        .unwrap();
        assert!(prompt.contains("### QUERY\n{docs} is literal\n### END"));
    }

    #[test]
    fn extract_section_round_trips() {
        let prompt = render(
            TemplateName::Align,
            &[("components", "subject: Who\nobject: Acme"), ("document", "text here")],
        )
        .unwrap();
        assert_eq!(
            extract_section(&prompt, "COMPONENTS"),
            Some("subject: Who\nobject: Acme")
        );
        assert_eq!(extract_section(&prompt, "DOCUMENT"), Some("text here"));
        assert_eq!(extract_section(&prompt, "MISSING"), None);
    }

    #[test]
    fn extract_section_multiline_body() {
        let prompt = "head\n### DOCS\nline one\nline two\n### END\ntail";
        assert_eq!(extract_section(prompt, "DOCS"), Some("line one\nline two"));
    }

    #[test]
    fn extract_section_empty_body() {
        let prompt = "### DOCS\n### END";
        assert_eq!(extract_section(prompt, "DOCS"), Some(""));
    }

    #[test]
    fn every_template_mentions_its_sections() {
        for name in TemplateName::ALL {
            let text = template_text(name);
            assert!(text.contains("### END"), "{name} lacks section markers");
        }
    }
}

//! Prompt templates and rendering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kgraph::{ConceptId, DocId, DocRecord};

pub const SHORT_TEMPLATE: &str = "Based on the following scientific abstracts, please describe how an indirect relationship between {SOURCE} and {TARGET} might exist.";

pub const BASELINE_TEMPLATE: &str = "Based on the following scientific abstracts, please describe how an indirect relationship between {SOURCE} and {TARGET} might exist. Consider the key findings, underlying mechanisms, and any intermediate entities or processes mentioned in the abstracts. Your explanation should connect these elements to form a coherent narrative that illustrates the possible indirect linkage between {source} and {target}.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    #[default]
    Short,
    Baseline,
}

impl Template {
    pub fn text(self) -> &'static str {
        match self {
            Template::Short => SHORT_TEMPLATE,
            Template::Baseline => BASELINE_TEMPLATE,
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Short => "short",
            Template::Baseline => "baseline",
        })
    }
}

impl FromStr for Template {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short" => Ok(Template::Short),
            "baseline" => Ok(Template::Baseline),
            other => Err(format!("unknown template '{other}'")),
        }
    }
}

/// An abstract placed into a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub doc_id: DocId,
    pub text: String,
}

impl ContextDoc {
    /// Uses the record text, or a synthetic sentence listing its concepts.
    pub fn from_record(doc: &DocRecord) -> Self {
        let text = match &doc.text {
            Some(t) if !t.trim().is_empty() => t.clone(),
            _ => {
                let names: Vec<&str> = doc.concepts.iter().map(ConceptId::as_str).collect();
                format!("This study mentions {}.", names.join(" and "))
            }
        };
        ContextDoc {
            doc_id: doc.doc_id.clone(),
            text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub source: ConceptId,
    pub target: ConceptId,
    pub context_docs: Vec<ContextDoc>,
    pub template: Template,
    pub rendered: String,
}

const ABSTRACT_PREFIX: &str = "Abstract ";

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Substitutes the endpoints into the template and appends one
/// `Abstract <i> (<doc id>): <text>` block per context document.
pub fn build_prompt(
    source: &ConceptId,
    target: &ConceptId,
    contexts: &[ContextDoc],
    template: Template,
) -> Prompt {
    let mut rendered = template
        .text()
        .replace("{SOURCE}", source.as_str())
        .replace("{TARGET}", target.as_str())
        .replace("{source}", source.as_str())
        .replace("{target}", target.as_str());
    for (i, c) in contexts.iter().enumerate() {
        rendered.push_str(&format!(
            "\n\n{ABSTRACT_PREFIX}{} ({}): {}",
            i + 1,
            c.doc_id,
            one_line(&c.text)
        ));
    }
    Prompt {
        source: source.clone(),
        target: target.clone(),
        context_docs: contexts.to_vec(),
        template,
        rendered,
    }
}

/// Recovers `(doc id, text)` pairs from a rendered prompt.
pub fn parse_abstracts(rendered: &str) -> Vec<(DocId, String)> {
    rendered
        .split("\n\n")
        .filter_map(|block| {
            let rest = block.strip_prefix(ABSTRACT_PREFIX)?;
            let (_, rest) = rest.split_once(" (")?;
            let (id, text) = rest.split_once("): ")?;
            Some((DocId::new(id), text.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: &str, text: &str) -> ContextDoc {
        ContextDoc {
            doc_id: DocId::new(id),
            text: text.into(),
        }
    }

    #[test]
    fn short_prompt_starts_with_instruction() {
        let p = build_prompt(&"A".into(), &"Z".into(), &[ctx("D1", "A binds B.")], Template::Short);
        assert!(p.rendered.starts_with(
            "Based on the following scientific abstracts, please describe how an indirect relationship between A and Z might exist."
        ));
        assert!(p.rendered.ends_with("Abstract 1 (D1): A binds B."));
    }

    #[test]
    fn baseline_prompt_has_narrative_sentence() {
        let p = build_prompt(&"A".into(), &"Z".into(), &[ctx("D1", "x")], Template::Baseline);
        assert!(p.rendered.contains("form a coherent narrative"));
        assert!(p.rendered.contains("indirect linkage between A and Z."));
    }

    #[test]
    fn swapping_endpoints_only_changes_slots() {
        let c = [ctx("D1", "text")];
        let a = build_prompt(&"A".into(), &"Z".into(), &c, Template::Short).rendered;
        let b = build_prompt(&"Z".into(), &"A".into(), &c, Template::Short).rendered;
        let diffs: Vec<(char, char)> = a.chars().zip(b.chars()).filter(|(x, y)| x != y).collect();
        assert_eq!(a.len(), b.len());
        assert_eq!(diffs, vec![('A', 'Z'), ('Z', 'A')]);
    }

    #[test]
    fn abstracts_round_trip_in_order() {
        let c = [ctx("D2", "first\nline"), ctx("D1", "second")];
        let p = build_prompt(&"A".into(), &"Z".into(), &c, Template::Short);
        assert_eq!(
            parse_abstracts(&p.rendered),
            vec![(DocId::new("D2"), "first line".into()), (DocId::new("D1"), "second".into())]
        );
    }
}

//! Lexicon-based concept detection, sentence splitting and mock text encoders.

use std::collections::{BTreeMap, BTreeSet};

use crate::embed::{EmbeddingSource, EmbeddingTable, Vector};
use crate::kgraph::{ConceptId, DocRecord};

/// Surface string → concept map used to spot concepts in free text.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    surfaces: BTreeMap<Vec<String>, ConceptId>,
    max_words: usize,
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-')))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every concept id is its own surface form.
    pub fn identity<'a, I: IntoIterator<Item = &'a ConceptId>>(concepts: I) -> Self {
        let mut lex = Lexicon::new();
        for c in concepts {
            lex.insert(c.as_str(), c.clone());
        }
        lex
    }

    pub fn insert(&mut self, surface: &str, concept: ConceptId) {
        let key = tokenize(surface);
        if key.is_empty() {
            return;
        }
        self.max_words = self.max_words.max(key.len());
        self.surfaces.insert(key, concept);
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Distinct concepts in order of first mention; longest surface match wins.
    pub fn detect(&self, text: &str) -> Vec<ConceptId> {
        let toks = tokenize(text);
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let mut matched = 0;
            for n in (1..=self.max_words.min(toks.len() - i)).rev() {
                if let Some(c) = self.surfaces.get(&toks[i..i + n]) {
                    if seen.insert(c.clone()) {
                        out.push(c.clone());
                    }
                    matched = n;
                    break;
                }
            }
            i += matched.max(1);
        }
        out
    }

    pub fn detect_set(&self, text: &str) -> BTreeSet<ConceptId> {
        self.detect(text).into_iter().collect()
    }
}

/// Lower-cased word tokens with surrounding punctuation stripped.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text)
}

/// Byte spans of sentences: a sentence ends at '.', '!' or '?' followed by
/// whitespace or end of text. Whitespace between sentences belongs to neither.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let bytes = text.as_bytes();
    let mut start = None;
    let mut i = 0;
    while i < bytes.len() {
        let ch = text[i..].chars().next().expect("char boundary");
        let len = ch.len_utf8();
        if start.is_none() {
            if !ch.is_whitespace() {
                start = Some(i);
            }
        } else if matches!(ch, '.' | '!' | '?') {
            let next = text[i + len..].chars().next();
            if next.is_none_or(char::is_whitespace) {
                spans.push((start.take().expect("checked"), i + len));
            }
        }
        i += len;
    }
    if let Some(s) = start {
        let end = text.trim_end().len();
        if end > s {
            spans.push((s, end));
        }
    }
    spans
}

/// Encodes free text, documents and concept pairs into one vector space.
pub trait TextEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn embed_text(&self, text: &str) -> Option<Vector>;
    fn embed_doc(&self, doc: &DocRecord) -> Option<Vector>;
    fn embed_concepts(&self, concepts: &[ConceptId]) -> Option<Vector>;
}

/// Unit-normalized mean of the concept vectors mentioned by a text.
/// Document vectors come from an optional precomputed table, else from the
/// document's concept set.
#[derive(Debug, Clone)]
pub struct ConceptMeanEncoder {
    name: String,
    lexicon: Lexicon,
    concepts: EmbeddingSource,
    docs: Option<EmbeddingTable>,
}

impl ConceptMeanEncoder {
    pub fn new(name: impl Into<String>, lexicon: Lexicon, concepts: EmbeddingSource) -> Self {
        ConceptMeanEncoder {
            name: name.into(),
            lexicon,
            concepts,
            docs: None,
        }
    }

    pub fn with_doc_table(mut self, table: EmbeddingTable) -> Self {
        self.docs = Some(table);
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }
}

impl TextEncoder for ConceptMeanEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed_text(&self, text: &str) -> Option<Vector> {
        self.embed_concepts(&self.lexicon.detect(text))
    }

    fn embed_doc(&self, doc: &DocRecord) -> Option<Vector> {
        if let Some(table) = &self.docs {
            if let Ok(v) = table.get(doc.doc_id.as_str()) {
                return Some(v.clone());
            }
        }
        let concepts: Vec<ConceptId> = doc.concepts.iter().cloned().collect();
        self.embed_concepts(&concepts)
    }

    fn embed_concepts(&self, concepts: &[ConceptId]) -> Option<Vector> {
        let vs: Vec<Vector> = concepts
            .iter()
            .filter_map(|c| self.concepts.vector(c.as_str()).ok())
            .collect();
        Vector::mean(&vs).ok()?.normalized().ok()
    }
}

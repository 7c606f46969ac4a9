//! Temporal concept co-occurrence graph.
//!
//! Documents are ingested one at a time; every unordered pair of distinct
//! concepts mentioned by a document becomes an edge carrying `(doc_id, year)`
//! evidence. Once frozen, the graph can be viewed at any year `t` through a
//! [`SnapshotView`], which only exposes edges first evidenced at or before `t`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("document {0} was already ingested")]
    DuplicateDocument(DocId),
    #[error("graph is frozen")]
    FrozenGraph,
    #[error("graph must be frozen before taking snapshots")]
    NotFrozen,
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("no edge between {0} and {1} in snapshot")]
    NoSuchEdge(ConceptId, ConceptId),
    #[error("document {doc_id} has year {year} outside [{min}, {max}]")]
    YearOutOfRange {
        doc_id: DocId,
        year: i32,
        min: i32,
        max: i32,
    },
    #[error("empty identifier in document {0}")]
    EmptyId(String),
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

/// Opaque concept identifier (a CUI in biomedical corpora).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(id: impl Into<String>) -> Self {
        ConceptId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConceptId {
    fn from(s: &str) -> Self {
        ConceptId(s.to_string())
    }
}

impl From<String> for ConceptId {
    fn from(s: String) -> Self {
        ConceptId(s)
    }
}

/// Opaque document identifier (a PMID in biomedical corpora).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(String);

impl DocId {
    pub fn new(id: impl Into<String>) -> Self {
        DocId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        DocId(s.to_string())
    }
}

impl From<String> for DocId {
    fn from(s: String) -> Self {
        DocId(s)
    }
}

/// A `(subject, verb, object)` annotation carried by a corpus record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnnotatedPredicate {
    pub subject: ConceptId,
    pub verb: String,
    pub object: ConceptId,
}

/// One corpus record: an abstract with its publication year and the concepts it mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: DocId,
    pub year: i32,
    pub concepts: BTreeSet<ConceptId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title_concepts: Option<BTreeSet<ConceptId>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicates: Vec<AnnotatedPredicate>,
}

impl DocRecord {
    pub fn new<I, C>(doc_id: impl Into<String>, year: i32, concepts: I) -> Self
    where
        I: IntoIterator<Item = C>,
        C: Into<ConceptId>,
    {
        DocRecord {
            doc_id: DocId::new(doc_id),
            year,
            concepts: concepts.into_iter().map(Into::into).collect(),
            text: None,
            title_concepts: None,
            predicates: Vec::new(),
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn mentions(&self, c: &ConceptId) -> bool {
        self.concepts.contains(c)
    }
}

/// A single piece of literature support for an edge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Evidence {
    pub doc_id: DocId,
    pub year: i32,
}

/// Undirected co-occurrence edge. Endpoints are stored with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub u: ConceptId,
    pub v: ConceptId,
    evidence: BTreeSet<Evidence>,
    first_year: i32,
}

impl Edge {
    pub fn evidence(&self) -> impl Iterator<Item = &Evidence> {
        self.evidence.iter()
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }
}

fn edge_key(a: &ConceptId, b: &ConceptId) -> (ConceptId, ConceptId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Cumulative co-occurrence graph over all ingested years.
#[derive(Debug, Clone, Default)]
pub struct TemporalGraph {
    nodes: BTreeMap<ConceptId, i32>,
    edges: BTreeMap<(ConceptId, ConceptId), Edge>,
    adjacency: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
    docs: BTreeMap<DocId, DocRecord>,
    concept_docs: BTreeMap<ConceptId, BTreeSet<DocId>>,
    year_range: Option<(i32, i32)>,
    frozen: bool,
}

impl TemporalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph that rejects documents published outside `[min, max]`.
    pub fn with_year_range(min: i32, max: i32) -> Self {
        TemporalGraph {
            year_range: Some((min, max)),
            ..Self::default()
        }
    }

    pub fn add_document(&mut self, doc: DocRecord) -> Result<(), GraphError> {
        if self.frozen {
            return Err(GraphError::FrozenGraph);
        }
        if doc.doc_id.as_str().is_empty() {
            return Err(GraphError::EmptyId("<unnamed>".into()));
        }
        if self.docs.contains_key(&doc.doc_id) {
            return Err(GraphError::DuplicateDocument(doc.doc_id));
        }
        if let Some((min, max)) = self.year_range {
            if doc.year < min || doc.year > max {
                return Err(GraphError::YearOutOfRange {
                    doc_id: doc.doc_id,
                    year: doc.year,
                    min,
                    max,
                });
            }
        }
        if doc.concepts.iter().any(|c| c.as_str().is_empty()) {
            return Err(GraphError::EmptyId(doc.doc_id.to_string()));
        }

        for c in &doc.concepts {
            let first = self.nodes.entry(c.clone()).or_insert(doc.year);
            *first = (*first).min(doc.year);
            self.adjacency.entry(c.clone()).or_default();
            self.concept_docs
                .entry(c.clone())
                .or_default()
                .insert(doc.doc_id.clone());
        }

        let concepts: Vec<&ConceptId> = doc.concepts.iter().collect();
        for (i, a) in concepts.iter().enumerate() {
            for b in &concepts[i + 1..] {
                // BTreeSet iteration is sorted, so a < b here
                let key = ((*a).clone(), (*b).clone());
                let edge = self.edges.entry(key).or_insert_with(|| Edge {
                    u: (*a).clone(),
                    v: (*b).clone(),
                    evidence: BTreeSet::new(),
                    first_year: doc.year,
                });
                edge.evidence.insert(Evidence {
                    doc_id: doc.doc_id.clone(),
                    year: doc.year,
                });
                edge.first_year = edge.first_year.min(doc.year);
                self.adjacency
                    .get_mut(*a)
                    .expect("node inserted above")
                    .insert((*b).clone());
                self.adjacency
                    .get_mut(*b)
                    .expect("node inserted above")
                    .insert((*a).clone());
            }
        }

        self.docs.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    /// Makes the graph immutable. Idempotent.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn snapshot(&self, t: i32) -> Result<SnapshotView<'_>, GraphError> {
        if !self.frozen {
            return Err(GraphError::NotFrozen);
        }
        Ok(SnapshotView { graph: self, t })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ConceptId> {
        self.nodes.keys()
    }

    pub fn contains_node(&self, c: &ConceptId) -> bool {
        self.nodes.contains_key(c)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge(&self, a: &ConceptId, b: &ConceptId) -> Option<&Edge> {
        self.edges.get(&edge_key(a, b))
    }

    pub fn document(&self, id: &DocId) -> Option<&DocRecord> {
        self.docs.get(id)
    }

    /// Documents in ingestion-independent (doc_id) order.
    pub fn documents(&self) -> impl Iterator<Item = &DocRecord> {
        self.docs.values()
    }

    pub fn docs_mentioning(&self, c: &ConceptId) -> impl Iterator<Item = &DocRecord> {
        self.concept_docs
            .get(c)
            .into_iter()
            .flat_map(|ids| ids.iter())
            .filter_map(|id| self.docs.get(id))
    }

    pub fn year_bounds(&self) -> Option<(i32, i32)> {
        let min = self.docs.values().map(|d| d.year).min()?;
        let max = self.docs.values().map(|d| d.year).max()?;
        Some((min, max))
    }

    /// Reads a line-delimited JSON corpus into an unfrozen graph.
    pub fn read_corpus<R: Read>(reader: R) -> Result<TemporalGraph, GraphError> {
        let mut g = TemporalGraph::new();
        for doc in read_corpus_records(reader)? {
            g.add_document(doc)?;
        }
        Ok(g)
    }

    /// Writes the ingested documents back out as a line-delimited corpus.
    /// Re-ingesting the output reproduces the same graph.
    pub fn write_corpus<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        for doc in self.docs.values() {
            let line = serde_json::to_string(doc).map_err(|e| GraphError::Io(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

pub fn read_corpus_records<R: Read>(reader: R) -> Result<Vec<DocRecord>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: DocRecord = serde_json::from_str(&line).map_err(|e| GraphError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(doc);
    }
    Ok(out)
}

/// Read-only view of a frozen graph restricted to evidence published up to year `t`.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotView<'g> {
    graph: &'g TemporalGraph,
    t: i32,
}

impl<'g> SnapshotView<'g> {
    pub fn t(&self) -> i32 {
        self.t
    }

    pub fn graph(&self) -> &'g TemporalGraph {
        self.graph
    }

    /// Concepts mentioned by at least one document with year ≤ t.
    pub fn nodes(&self) -> impl Iterator<Item = &'g ConceptId> + '_ {
        let t = self.t;
        self.graph
            .nodes
            .iter()
            .filter(move |(_, first)| **first <= t)
            .map(|(c, _)| c)
    }

    pub fn contains_node(&self, c: &ConceptId) -> bool {
        self.graph.nodes.get(c).is_some_and(|first| *first <= self.t)
    }

    pub fn edges(&self) -> impl Iterator<Item = &'g Edge> + '_ {
        let t = self.t;
        self.graph.edges.values().filter(move |e| e.first_year <= t)
    }

    pub fn has_edge(&self, a: &ConceptId, b: &ConceptId) -> bool {
        self.graph.edge(a, b).is_some_and(|e| e.first_year <= self.t)
    }

    /// Neighbors of `c` reachable through edges present in this view, in sorted order.
    pub fn neighbors(&self, c: &ConceptId) -> Result<BTreeSet<ConceptId>, GraphError> {
        let adj = self
            .graph
            .adjacency
            .get(c)
            .ok_or_else(|| GraphError::UnknownConcept(c.clone()))?;
        Ok(adj
            .iter()
            .filter(|d| self.has_edge(c, d))
            .cloned()
            .collect())
    }

    /// Evidence for edge `(u, v)` with year ≤ t, sorted by year descending then doc_id ascending.
    pub fn edge_evidence(&self, u: &ConceptId, v: &ConceptId) -> Result<Vec<Evidence>, GraphError> {
        let edge = self
            .graph
            .edge(u, v)
            .filter(|e| e.first_year <= self.t)
            .ok_or_else(|| GraphError::NoSuchEdge(u.clone(), v.clone()))?;
        let mut ev: Vec<Evidence> = edge
            .evidence
            .iter()
            .filter(|e| e.year <= self.t)
            .cloned()
            .collect();
        ev.sort_by(|a, b| b.year.cmp(&a.year).then_with(|| a.doc_id.cmp(&b.doc_id)));
        Ok(ev)
    }

    /// Documents with year ≤ t that mention `c`, sorted by year descending then doc_id.
    pub fn docs_mentioning(&self, c: &ConceptId) -> Vec<&'g DocRecord> {
        let mut docs: Vec<&DocRecord> = self
            .graph
            .docs_mentioning(c)
            .filter(|d| d.year <= self.t)
            .collect();
        docs.sort_by(|a, b| b.year.cmp(&a.year).then_with(|| a.doc_id.cmp(&b.doc_id)));
        docs
    }
}

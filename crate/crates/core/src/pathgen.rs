//! Candidate path enumeration and labeled sample construction.
//!
//! A query is a concept pair whose direct edge first appears at year `t`.
//! Candidate paths are sampled from the snapshot at `t - 1`; a path is positive
//! when all of its intermediate nodes are mentioned by the abstracts that report
//! the discovery at year `t`, and a hard negative otherwise. Corrupted-path and
//! corrupted-context negatives are derived from positives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgraph::{ConceptId, DocId, GraphError, SnapshotView, TemporalGraph};
use crate::seed;

/// Longest candidate path, counted in nodes (source and target included).
pub const MAX_PATH_NODES: usize = 4;
/// Shortest candidate path: one intermediate node.
pub const MIN_PATH_NODES: usize = 3;

const CONTEXT_RETRIES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("no abstract reports the discovery {0}")]
    NoFutureEvidence(Query),
    #[error("direct edge present between {0} and {1}")]
    DirectEdgePresent(ConceptId, ConceptId),
    #[error("no path between {0} and {1} within {2} nodes")]
    Disconnected(ConceptId, ConceptId, usize),
    #[error("max_nodes must be 3 or 4, got {0}")]
    InvalidBound(usize),
    #[error("path endpoints do not match query")]
    EndpointMismatch,
    #[error("replacement pool is empty")]
    EmptyPool,
    #[error("path has no intermediate nodes")]
    NoIntermediates,
    #[error("corrupted contexts cannot differ from the positive contexts")]
    CannotDiffer,
    #[error("expected a positive sample")]
    NotPositive,
    #[error("dataset io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Query {
    pub source: ConceptId,
    pub target: ConceptId,
    pub t: i32,
}

impl Query {
    pub fn new(source: impl Into<ConceptId>, target: impl Into<ConceptId>, t: i32) -> Self {
        Query {
            source: source.into(),
            target: target.into(),
            t,
        }
    }

    /// Checks that `(source, target)` is a discovery at `t`: present in the
    /// snapshot at `t` but absent at `t - 1`.
    pub fn validate(&self, g: &TemporalGraph) -> Result<(), PathError> {
        if self.source == self.target {
            return Err(PathError::InvalidQuery("source equals target".into()));
        }
        if !g.snapshot(self.t)?.has_edge(&self.source, &self.target) {
            return Err(PathError::InvalidQuery(format!("{self} has no edge at {}", self.t)));
        }
        if g.snapshot(self.t - 1)?.has_edge(&self.source, &self.target) {
            return Err(PathError::InvalidQuery(format!(
                "{self} already linked before {}",
                self.t
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}--{}@{}", self.source, self.target, self.t)
    }
}

/// Simple path with per-edge literature context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<ConceptId>,
    pub edge_contexts: Vec<Vec<DocId>>,
}

impl Path {
    pub fn intermediates(&self) -> &[ConceptId] {
        if self.nodes.len() < 2 {
            return &[];
        }
        &self.nodes[1..self.nodes.len() - 1]
    }

    pub fn node_len(&self) -> usize {
        self.nodes.len()
    }

    pub fn source(&self) -> &ConceptId {
        &self.nodes[0]
    }

    pub fn target(&self) -> &ConceptId {
        &self.nodes[self.nodes.len() - 1]
    }

    /// Per-edge contexts concatenated in edge order, first occurrence kept.
    pub fn flattened_contexts(&self) -> Vec<DocId> {
        let mut seen = BTreeSet::new();
        self.edge_contexts
            .iter()
            .flatten()
            .filter(|d| seen.insert((*d).clone()))
            .cloned()
            .collect()
    }

    fn with_view_contexts(nodes: Vec<ConceptId>, view: &SnapshotView<'_>) -> Result<Path, PathError> {
        let edge_contexts = nodes
            .windows(2)
            .map(|w| {
                Ok(view
                    .edge_evidence(&w[0], &w[1])?
                    .into_iter()
                    .map(|e| e.doc_id)
                    .collect())
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        Ok(Path {
            nodes,
            edge_contexts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FutureReferenceSet {
    pub query: Query,
    pub terms: BTreeSet<ConceptId>,
    pub abstracts: BTreeSet<DocId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    None,
    Hard,
    CorruptedPath,
    CorruptedContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPathSample {
    pub query: Query,
    pub path: Path,
    pub contexts: Vec<DocId>,
    pub label: Label,
    pub negative_kind: NegativeKind,
}

impl LabeledPathSample {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

/// Abstracts published at `q.t` that mention both endpoints, and the other
/// concepts they mention.
pub fn future_reference(g: &TemporalGraph, q: &Query) -> Result<FutureReferenceSet, PathError> {
    let mut abstracts = BTreeSet::new();
    let mut terms = BTreeSet::new();
    for doc in g.docs_mentioning(&q.source) {
        if doc.year == q.t && doc.mentions(&q.target) {
            abstracts.insert(doc.doc_id.clone());
            terms.extend(doc.concepts.iter().cloned());
        }
    }
    if abstracts.is_empty() {
        return Err(PathError::NoFutureEvidence(q.clone()));
    }
    terms.remove(&q.source);
    terms.remove(&q.target);
    Ok(FutureReferenceSet {
        query: q.clone(),
        terms,
        abstracts,
    })
}

/// All simple paths from `q.source` to `q.target` with 3..=`max_nodes` nodes,
/// each node-length group sorted lexicographically and truncated to
/// `cap_per_length`; the result is in lexicographic node order.
pub fn enumerate_candidate_paths(
    view: &SnapshotView<'_>,
    q: &Query,
    max_nodes: usize,
    cap_per_length: Option<usize>,
) -> Result<Vec<Path>, PathError> {
    if !(MIN_PATH_NODES..=MAX_PATH_NODES).contains(&max_nodes) {
        return Err(PathError::InvalidBound(max_nodes));
    }
    if view.has_edge(&q.source, &q.target) {
        return Err(PathError::DirectEdgePresent(q.source.clone(), q.target.clone()));
    }
    // both endpoints must be known to the graph
    view.neighbors(&q.target)?;

    let mut found: Vec<Vec<ConceptId>> = Vec::new();
    let mut stack = vec![q.source.clone()];
    dfs(view, &q.target, max_nodes, &mut stack, &mut found)?;

    let mut by_len: BTreeMap<usize, Vec<Vec<ConceptId>>> = BTreeMap::new();
    for p in found {
        by_len.entry(p.len()).or_default().push(p);
    }
    let mut kept: Vec<Vec<ConceptId>> = Vec::new();
    for (_, mut group) in by_len {
        group.sort();
        if let Some(cap) = cap_per_length {
            group.truncate(cap);
        }
        kept.extend(group);
    }
    kept.sort();
    if kept.is_empty() {
        return Err(PathError::Disconnected(
            q.source.clone(),
            q.target.clone(),
            max_nodes,
        ));
    }
    kept.into_iter()
        .map(|nodes| Path::with_view_contexts(nodes, view))
        .collect()
}

fn dfs(
    view: &SnapshotView<'_>,
    target: &ConceptId,
    max_nodes: usize,
    stack: &mut Vec<ConceptId>,
    found: &mut Vec<Vec<ConceptId>>,
) -> Result<(), PathError> {
    let last = stack.last().expect("stack starts with the source").clone();
    for next in view.neighbors(&last)? {
        if stack.contains(&next) {
            continue;
        }
        if &next == target {
            if stack.len() + 1 >= MIN_PATH_NODES {
                let mut p = stack.clone();
                p.push(next);
                found.push(p);
            }
        } else if stack.len() + 1 < max_nodes {
            stack.push(next);
            dfs(view, target, max_nodes, stack, found)?;
            stack.pop();
        }
    }
    Ok(())
}

/// Positive iff every intermediate node is a future reference term.
pub fn label_path(p: &Path, fr: &FutureReferenceSet) -> Result<Label, PathError> {
    if p.nodes.len() < 2 || p.source() != &fr.query.source || p.target() != &fr.query.target {
        return Err(PathError::EndpointMismatch);
    }
    if p.intermediates().iter().all(|m| fr.terms.contains(m)) {
        Ok(Label::Positive)
    } else {
        Ok(Label::Negative)
    }
}

fn doc_ids_mentioning(view: &SnapshotView<'_>, c: &ConceptId) -> Vec<DocId> {
    view.docs_mentioning(c)
        .into_iter()
        .map(|d| d.doc_id.clone())
        .collect()
}

/// Replaces one intermediate node by a uniform draw from `node_pool`.
///
/// Contexts of the two incident edges are re-read from the snapshot; an edge
/// that does not exist there falls back to the documents mentioning the
/// replacement node.
pub fn corrupt_path(
    view: &SnapshotView<'_>,
    p: &Path,
    node_pool: &BTreeSet<ConceptId>,
    rng_seed: u64,
) -> Result<Path, PathError> {
    let pool: Vec<&ConceptId> = node_pool.iter().filter(|c| !p.nodes.contains(c)).collect();
    if pool.is_empty() {
        return Err(PathError::EmptyPool);
    }
    let n_mid = p.intermediates().len();
    if n_mid == 0 {
        return Err(PathError::NoIntermediates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pos = 1 + rng.gen_range(0..n_mid);
    let replacement = pool[rng.gen_range(0..pool.len())].clone();

    let mut nodes = p.nodes.clone();
    nodes[pos] = replacement.clone();
    let mut edge_contexts = p.edge_contexts.clone();
    for edge in [pos - 1, pos] {
        let (a, b) = (&nodes[edge], &nodes[edge + 1]);
        edge_contexts[edge] = if view.has_edge(a, b) {
            view.edge_evidence(a, b)?.into_iter().map(|e| e.doc_id).collect()
        } else {
            doc_ids_mentioning(view, &replacement)
        };
    }
    Ok(Path {
        nodes,
        edge_contexts,
    })
}

/// Pairs a positive path with contexts retrieved per node, ignoring which
/// documents actually link consecutive nodes. Redraws until the context set is
/// not contained in the positive's contexts.
pub fn corrupt_context(
    view: &SnapshotView<'_>,
    positive: &LabeledPathSample,
    rng_seed: u64,
) -> Result<LabeledPathSample, PathError> {
    if !positive.is_positive() {
        return Err(PathError::NotPositive);
    }
    let original: BTreeSet<&DocId> = positive.contexts.iter().collect();
    let per_node: Vec<Vec<DocId>> = positive
        .path
        .nodes
        .iter()
        .map(|n| doc_ids_mentioning(view, n))
        .collect();
    if per_node.iter().flatten().all(|d| original.contains(d)) {
        return Err(PathError::CannotDiffer);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..CONTEXT_RETRIES {
        let mut seen = BTreeSet::new();
        let mut contexts = Vec::new();
        for docs in &per_node {
            if docs.is_empty() {
                continue;
            }
            let d = &docs[rng.gen_range(0..docs.len())];
            if seen.insert(d.clone()) {
                contexts.push(d.clone());
            }
        }
        if contexts.iter().any(|d| !original.contains(d)) {
            return Ok(LabeledPathSample {
                query: positive.query.clone(),
                path: positive.path.clone(),
                contexts,
                label: Label::Negative,
                negative_kind: NegativeKind::CorruptedContext,
            });
        }
    }
    Err(PathError::CannotDiffer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeCaps {
    pub neg_len3: usize,
    pub neg_len4: usize,
}

impl Default for NegativeCaps {
    fn default() -> Self {
        NegativeCaps {
            neg_len3: 100,
            neg_len4: 100,
        }
    }
}

impl NegativeCaps {
    fn for_len(&self, nodes: usize) -> usize {
        match nodes {
            3 => self.neg_len3,
            4 => self.neg_len4,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// Positives, hard negatives and both corruption kinds.
    Train,
    /// Positives and hard negatives only.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOptions {
    pub caps: NegativeCaps,
    pub mode: DatasetMode,
    pub seed: u64,
    pub max_nodes: usize,
    /// Latest snapshot year used for sampling; defaults to `q.t - 1` per query.
    pub sampling_cutoff: Option<i32>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            caps: NegativeCaps::default(),
            mode: DatasetMode::Train,
            seed: 0,
            max_nodes: MAX_PATH_NODES,
            sampling_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query: Query,
    pub positives: usize,
    pub hard_negatives: usize,
    pub corrupted_paths: usize,
    pub corrupted_contexts: usize,
    pub neg_pos_ratio: Option<f64>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl QueryReport {
    fn empty(q: &Query) -> Self {
        QueryReport {
            query: q.clone(),
            positives: 0,
            hard_negatives: 0,
            corrupted_paths: 0,
            corrupted_contexts: 0,
            neg_pos_ratio: None,
            error: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<LabeledPathSample>,
    pub reports: Vec<QueryReport>,
}

pub fn build_dataset(g: &TemporalGraph, queries: &[Query], opts: &DatasetOptions) -> Dataset {
    let per_query: Vec<(Vec<LabeledPathSample>, QueryReport)> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut report = QueryReport::empty(q);
            match query_samples(g, q, i as u64, opts, &mut report) {
                Ok(samples) => (samples, report),
                Err(e) => {
                    report.error = Some(e.to_string());
                    (Vec::new(), report)
                }
            }
        })
        .collect();

    let mut ds = Dataset::default();
    for (samples, report) in per_query {
        ds.samples.extend(samples);
        ds.reports.push(report);
    }
    ds
}

fn query_samples(
    g: &TemporalGraph,
    q: &Query,
    index: u64,
    opts: &DatasetOptions,
    report: &mut QueryReport,
) -> Result<Vec<LabeledPathSample>, PathError> {
    q.validate(g)?;
    let fr = future_reference(g, q)?;
    let sample_year = opts.sampling_cutoff.map_or(q.t - 1, |c| c.min(q.t - 1));
    let view = g.snapshot(sample_year)?;
    let paths = enumerate_candidate_paths(&view, q, opts.max_nodes, None)?;

    let mut positives = Vec::new();
    let mut hard_by_len: BTreeMap<usize, Vec<LabeledPathSample>> = BTreeMap::new();
    for path in paths {
        let label = label_path(&path, &fr)?;
        let sample = LabeledPathSample {
            query: q.clone(),
            contexts: path.flattened_contexts(),
            path,
            label,
            negative_kind: match label {
                Label::Positive => NegativeKind::None,
                Label::Negative => NegativeKind::Hard,
            },
        };
        match label {
            Label::Positive => positives.push(sample),
            Label::Negative => hard_by_len.entry(sample.path.node_len()).or_default().push(sample),
        }
    }
    let mut hard = Vec::new();
    for (len, mut group) in hard_by_len {
        group.truncate(opts.caps.for_len(len));
        hard.extend(group);
    }

    let mut corrupted = Vec::new();
    if opts.mode == DatasetMode::Train {
        let pool: BTreeSet<ConceptId> = view.nodes().cloned().collect();
        for (j, pos) in positives.iter().enumerate() {
            let stream = (index << 20) | j as u64;
            match corrupt_path(&view, &pos.path, &pool, seed::derive(opts.seed, "corrupt_path", stream)) {
                Ok(path) => {
                    report.corrupted_paths += 1;
                    corrupted.push(LabeledPathSample {
                        query: q.clone(),
                        contexts: path.flattened_contexts(),
                        path,
                        label: Label::Negative,
                        negative_kind: NegativeKind::CorruptedPath,
                    });
                }
                Err(e) => report.warnings.push(format!("corrupt_path: {e}")),
            }
            match corrupt_context(&view, pos, seed::derive(opts.seed, "corrupt_context", stream)) {
                Ok(s) => {
                    report.corrupted_contexts += 1;
                    corrupted.push(s);
                }
                Err(e) => report.warnings.push(format!("corrupt_context: {e}")),
            }
        }
    }

    report.positives = positives.len();
    report.hard_negatives = hard.len();
    let negatives = report.hard_negatives + report.corrupted_paths + report.corrupted_contexts;
    report.neg_pos_ratio = (report.positives > 0).then(|| negatives as f64 / report.positives as f64);

    let mut out = positives;
    out.extend(hard);
    out.extend(corrupted);
    Ok(out)
}

/// Edges first evidenced in `[from_year, until_year]`, as queries ordered by
/// `(t, source, target)`.
pub fn discover_queries(g: &TemporalGraph, from_year: i32, until_year: Option<i32>) -> Vec<Query> {
    let mut qs: Vec<Query> = g
        .edges()
        .filter(|e| e.first_year() >= from_year && until_year.is_none_or(|u| e.first_year() <= u))
        .map(|e| Query::new(e.u.clone(), e.v.clone(), e.first_year()))
        .collect();
    qs.sort();
    qs
}

/// Keeps queries whose endpoints share a future-reference title, or that have
/// an annotated `(source, verb, target)` predicate (either orientation) in a
/// future-reference abstract.
pub fn filter_expl_queries(g: &TemporalGraph, queries: &[Query]) -> Vec<Query> {
    queries
        .iter()
        .filter(|q| {
            g.docs_mentioning(&q.source)
                .filter(|d| d.year == q.t && d.mentions(&q.target))
                .any(|d| {
                    let in_title = d
                        .title_concepts
                        .as_ref()
                        .is_some_and(|t| t.contains(&q.source) && t.contains(&q.target));
                    let in_predicate = d.predicates.iter().any(|p| {
                        (p.subject == q.source && p.object == q.target)
                            || (p.subject == q.target && p.object == q.source)
                    });
                    in_title || in_predicate
                })
        })
        .cloned()
        .collect()
}

/// One dataset file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub query: Query,
    pub path_nodes: Vec<ConceptId>,
    pub context_doc_ids: Vec<DocId>,
    pub label: Label,
    pub negative_kind: NegativeKind,
    pub node_length: usize,
    pub edge_context_doc_ids: Vec<Vec<DocId>>,
}

impl From<&LabeledPathSample> for SampleRecord {
    fn from(s: &LabeledPathSample) -> Self {
        SampleRecord {
            query: s.query.clone(),
            path_nodes: s.path.nodes.clone(),
            context_doc_ids: s.contexts.clone(),
            label: s.label,
            negative_kind: s.negative_kind,
            node_length: s.path.node_len(),
            edge_context_doc_ids: s.path.edge_contexts.clone(),
        }
    }
}

impl From<SampleRecord> for LabeledPathSample {
    fn from(r: SampleRecord) -> Self {
        LabeledPathSample {
            query: r.query,
            path: Path {
                nodes: r.path_nodes,
                edge_contexts: r.edge_context_doc_ids,
            },
            contexts: r.context_doc_ids,
            label: r.label,
            negative_kind: r.negative_kind,
        }
    }
}

pub fn write_samples<W: Write>(samples: &[LabeledPathSample], mut w: W) -> Result<(), PathError> {
    for s in samples {
        let line = serde_json::to_string(&SampleRecord::from(s)).map_err(|e| PathError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| PathError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_samples<R: Read>(r: R) -> Result<Vec<LabeledPathSample>, PathError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| PathError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| PathError::Io(format!("line {}: {e}", i + 1)))?;
        out.push(rec.into());
    }
    Ok(out)
}

/// Groups samples per positive: each positive with every negative of its query.
/// Queries without negatives produce no groups.
pub fn group_by_positive(samples: &[LabeledPathSample]) -> Vec<(usize, Vec<usize>)> {
    let mut by_query: BTreeMap<&Query, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    let mut order: Vec<&Query> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let entry = by_query.entry(&s.query).or_insert_with(|| {
            order.push(&s.query);
            (Vec::new(), Vec::new())
        });
        if s.is_positive() {
            entry.0.push(i);
        } else {
            entry.1.push(i);
        }
    }
    let mut groups = Vec::new();
    for q in order {
        let (pos, neg) = &by_query[q];
        if neg.is_empty() {
            continue;
        }
        for &p in pos {
            groups.push((p, neg.clone()));
        }
    }
    groups
}

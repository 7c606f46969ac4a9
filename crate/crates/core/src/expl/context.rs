//! Per-edge context ranking, round-robin selection and rework replacement.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::text::TextEncoder;
use super::ExplError;
use crate::embed::{cosine, Vector};
use crate::kgraph::{ConceptId, DocId, TemporalGraph};
use crate::pathgen::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: DocId,
    pub score: f64,
}

/// Sorts by descending score, then ascending doc id. Missing vectors rank last.
pub fn rank_by_similarity(anchor: Option<&Vector>, docs: &[(DocId, Option<Vector>)]) -> Vec<RankedDoc> {
    let mut out: Vec<RankedDoc> = docs
        .iter()
        .map(|(id, v)| {
            let score = match (anchor, v) {
                (Some(a), Some(v)) => cosine(a, v).unwrap_or(f64::NEG_INFINITY),
                _ => f64::NEG_INFINITY,
            };
            RankedDoc {
                doc_id: id.clone(),
                score,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    out
}

/// The live context of one explanation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub edges: Vec<(ConceptId, ConceptId)>,
    pub candidates: Vec<Vec<RankedDoc>>,
    pub selected: Vec<DocId>,
    pub origin: BTreeMap<DocId, usize>,
    pub used: BTreeSet<DocId>,
    /// Fewer than `k` documents were available.
    pub short: bool,
}

impl ContextSet {
    /// Round-robin over the ranked per-edge lists until `k` distinct documents are taken.
    pub fn round_robin(edges: Vec<(ConceptId, ConceptId)>, candidates: Vec<Vec<RankedDoc>>, k: usize) -> Self {
        let mut selected = Vec::new();
        let mut origin = BTreeMap::new();
        let deepest = candidates.iter().map(Vec::len).max().unwrap_or(0);
        'outer: for r in 0..deepest {
            for (e, list) in candidates.iter().enumerate() {
                if selected.len() >= k {
                    break 'outer;
                }
                if let Some(d) = list.get(r) {
                    if !origin.contains_key(&d.doc_id) {
                        origin.insert(d.doc_id.clone(), e);
                        selected.push(d.doc_id.clone());
                    }
                }
            }
        }
        let short = selected.len() < k;
        let used = selected.iter().cloned().collect();
        ContextSet {
            edges,
            candidates,
            selected,
            origin,
            used,
            short,
        }
    }
}

/// Ranks each edge's evidence by cosine to the mean endpoint vector and
/// selects `k` documents round-robin across edges.
pub fn select_edge_contexts(
    path: &Path,
    g: &TemporalGraph,
    encoder: &dyn TextEncoder,
    k: usize,
) -> Result<ContextSet, ExplError> {
    let mut edges = Vec::new();
    let mut candidates = Vec::new();
    for (i, w) in path.nodes.windows(2).enumerate() {
        let pool = path.edge_contexts.get(i).filter(|p| !p.is_empty()).ok_or(ExplError::NoContext(i))?;
        let anchor = encoder.embed_concepts(&[w[0].clone(), w[1].clone()]);
        let docs = pool
            .iter()
            .map(|id| {
                let rec = g.document(id).ok_or_else(|| ExplError::UnknownDocument(id.clone()))?;
                Ok((id.clone(), encoder.embed_doc(rec)))
            })
            .collect::<Result<Vec<_>, ExplError>>()?;
        edges.push((w[0].clone(), w[1].clone()));
        candidates.push(rank_by_similarity(anchor.as_ref(), &docs));
    }
    if edges.is_empty() {
        return Err(ExplError::NoContext(0));
    }
    Ok(ContextSet::round_robin(edges, candidates, k))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub sentence_index: usize,
    pub edge: (ConceptId, ConceptId),
    pub old_doc: DocId,
    pub new_doc: DocId,
}

fn argmax_doc<'a, I>(sentence: &Vector, docs: I, doc_vec: &dyn Fn(&DocId) -> Option<Vector>) -> Option<DocId>
where
    I: IntoIterator<Item = &'a DocId>,
{
    let mut best: Option<(f64, &DocId)> = None;
    for d in docs {
        let Some(v) = doc_vec(d) else { continue };
        let Ok(s) = cosine(sentence, &v) else { continue };
        let better = match best {
            None => true,
            Some((bs, bd)) => s > bs || (s == bs && d < bd),
        };
        if better {
            best = Some((s, d));
        }
    }
    best.map(|(_, d)| d.clone())
}

/// Attributes the sentence to the most similar prompt document still in the
/// context, then swaps in the most similar unused candidate from that
/// document's edge.
pub fn refine_context(
    ctx: &mut ContextSet,
    prompt_docs: &[DocId],
    sentence_index: usize,
    sentence: &Vector,
    doc_vec: &dyn Fn(&DocId) -> Option<Vector>,
) -> Result<Replacement, ExplError> {
    let live: Vec<&DocId> = prompt_docs.iter().filter(|d| ctx.selected.contains(d)).collect();
    let old = argmax_doc(sentence, live, doc_vec).ok_or(ExplError::NoAttribution(sentence_index))?;
    let edge = *ctx.origin.get(&old).ok_or_else(|| ExplError::UnknownDocument(old.clone()))?;
    let unused: Vec<&DocId> = ctx.candidates[edge]
        .iter()
        .map(|r| &r.doc_id)
        .filter(|d| !ctx.used.contains(*d))
        .collect();
    if unused.is_empty() {
        return Err(ExplError::ExhaustedCandidates(old));
    }
    let new = argmax_doc(sentence, unused.iter().copied(), doc_vec).unwrap_or_else(|| unused[0].clone());
    let pos = ctx.selected.iter().position(|d| *d == old).expect("attributed doc is selected");
    ctx.selected[pos] = new.clone();
    ctx.origin.remove(&old);
    ctx.origin.insert(new.clone(), edge);
    ctx.used.insert(new.clone());
    Ok(Replacement {
        sentence_index,
        edge: ctx.edges[edge].clone(),
        old_doc: old,
        new_doc: new,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbeddingSource, EmbeddingTable, TableKind};
    use crate::expl::text::{ConceptMeanEncoder, Lexicon};
    use crate::kgraph::DocRecord;

    fn d(s: &str) -> DocId {
        DocId::new(s)
    }

    fn unit_at(cos: f64) -> Vector {
        Vector::new(vec![cos, (1.0 - cos * cos).sqrt()]).unwrap()
    }

    fn ranked(ids: &[&str]) -> Vec<RankedDoc> {
        ids.iter()
            .map(|i| RankedDoc {
                doc_id: d(i),
                score: 0.0,
            })
            .collect()
    }

    fn edge(a: &str, b: &str) -> (ConceptId, ConceptId) {
        (a.into(), b.into())
    }

    #[test]
    fn two_edges_k2_takes_top_of_each() {
        let ctx = ContextSet::round_robin(
            vec![edge("A", "B"), edge("B", "Z")],
            vec![ranked(&["d1", "d2"]), ranked(&["d3", "d4"])],
            2,
        );
        assert_eq!(ctx.selected, vec![d("d1"), d("d3")]);
        assert!(!ctx.short);
    }

    #[test]
    fn large_k_takes_everything_and_flags_short() {
        let ctx = ContextSet::round_robin(
            vec![edge("A", "B"), edge("B", "Z")],
            vec![ranked(&["d1", "d2", "d5"]), ranked(&["d2", "d4"])],
            10,
        );
        assert_eq!(ctx.selected, vec![d("d1"), d("d2"), d("d4"), d("d5")]);
        assert!(ctx.short);
        assert_eq!(ctx.origin[&d("d2")], 1);
    }

    #[test]
    fn hand_built_cosines_order_candidates() {
        let mut g = TemporalGraph::new();
        for id in ["p", "q", "r"] {
            g.add_document(DocRecord::new(id, 2000, ["A", "B"])).unwrap();
        }
        g.freeze();
        let mut concepts = EmbeddingTable::new(2, TableKind::Concept);
        concepts.insert("A", Vector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        concepts.insert("B", Vector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        let mut docs = EmbeddingTable::new(2, TableKind::Context);
        docs.insert("p", unit_at(0.1)).unwrap();
        docs.insert("q", unit_at(0.9)).unwrap();
        docs.insert("r", unit_at(0.5)).unwrap();
        let enc = ConceptMeanEncoder::new("t", Lexicon::new(), EmbeddingSource::Table(concepts)).with_doc_table(docs);
        let path = Path {
            nodes: vec!["A".into(), "B".into()],
            edge_contexts: vec![vec![d("p"), d("q"), d("r")]],
        };
        let ctx = select_edge_contexts(&path, &g, &enc, 3).unwrap();
        assert_eq!(ctx.selected, vec![d("q"), d("r"), d("p")]);
        let scores: Vec<f64> = ctx.candidates[0].iter().map(|r| r.score).collect();
        for (s, e) in scores.iter().zip([0.9, 0.5, 0.1]) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_edge_is_no_context() {
        let g = TemporalGraph::new();
        let enc = ConceptMeanEncoder::new("t", Lexicon::new(), EmbeddingSource::Synthetic { dim: 4, seed: 0 });
        let path = Path {
            nodes: vec!["A".into(), "B".into(), "C".into()],
            edge_contexts: vec![vec![], vec![]],
        };
        assert!(matches!(select_edge_contexts(&path, &g, &enc, 3), Err(ExplError::NoContext(0))));
    }

    fn lookup(m: BTreeMap<DocId, Vector>) -> impl Fn(&DocId) -> Option<Vector> {
        move |id| m.get(id).cloned()
    }

    fn single_edge_ctx(selected: &[&str], cands: &[&str], used: &[&str]) -> ContextSet {
        let mut ctx = ContextSet::round_robin(vec![edge("A", "B")], vec![ranked(cands)], selected.len());
        ctx.selected = selected.iter().map(|s| d(s)).collect();
        ctx.origin = ctx.selected.iter().map(|s| (s.clone(), 0)).collect();
        ctx.used = used.iter().chain(selected).map(|s| d(s)).collect();
        ctx
    }

    #[test]
    fn unused_constraint_dominates_similarity() {
        let sentence = unit_at(1.0);
        let vecs = BTreeMap::from([(d("cur"), unit_at(0.95)), (d("hi"), unit_at(0.9)), (d("lo"), unit_at(0.4))]);
        let mut ctx = single_edge_ctx(&["cur"], &["cur", "hi", "lo"], &["hi"]);
        let r = refine_context(&mut ctx, &[d("cur")], 0, &sentence, &lookup(vecs)).unwrap();
        assert_eq!((r.old_doc, r.new_doc.clone()), (d("cur"), d("lo")));
        assert_eq!(ctx.selected, vec![d("lo")]);
        assert!(ctx.used.contains(&d("lo")));
    }

    #[test]
    fn all_used_is_exhausted() {
        let vecs = BTreeMap::from([(d("cur"), unit_at(0.5)), (d("x"), unit_at(0.9))]);
        let mut ctx = single_edge_ctx(&["cur"], &["cur", "x"], &["x"]);
        let e = refine_context(&mut ctx, &[d("cur")], 0, &unit_at(1.0), &lookup(vecs)).unwrap_err();
        assert!(matches!(e, ExplError::ExhaustedCandidates(ref id) if *id == d("cur")));
        assert_eq!(ctx.selected, vec![d("cur")]);
    }

    #[test]
    fn picks_highest_unused_cosine() {
        let vecs = BTreeMap::from([
            (d("cur"), unit_at(0.99)),
            (d("a"), unit_at(0.2)),
            (d("b"), unit_at(0.8)),
            (d("c"), unit_at(0.5)),
        ]);
        let mut ctx = single_edge_ctx(&["cur"], &["cur", "a", "b", "c"], &[]);
        let r = refine_context(&mut ctx, &[d("cur")], 3, &unit_at(1.0), &lookup(vecs)).unwrap();
        assert_eq!(r.new_doc, d("b"));
        assert_eq!(r.sentence_index, 3);
        assert_eq!(r.edge, edge("A", "B"));
    }

    #[test]
    fn attribution_uses_most_similar_prompt_doc() {
        let mut ctx = ContextSet::round_robin(
            vec![edge("A", "B"), edge("B", "Z")],
            vec![ranked(&["x", "x2"]), ranked(&["y", "y2"])],
            2,
        );
        let vecs = BTreeMap::from([
            (d("x"), unit_at(0.1)),
            (d("y"), unit_at(0.95)),
            (d("x2"), unit_at(0.9)),
            (d("y2"), unit_at(0.3)),
        ]);
        let prompt = ctx.selected.clone();
        let r = refine_context(&mut ctx, &prompt, 0, &unit_at(1.0), &lookup(vecs)).unwrap();
        assert_eq!((r.old_doc, r.new_doc), (d("y"), d("y2")));
        assert_eq!(ctx.selected, vec![d("x"), d("y2")]);
    }
}

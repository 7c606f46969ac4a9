#![allow(dead_code)]

use hgcr_core::embed::EmbeddingSource;
use hgcr_core::expl::{ComparisonPool, ConceptMeanEncoder, Lexicon};
use hgcr_core::kgraph::{ConceptId, DocId, DocRecord, TemporalGraph};
use hgcr_core::pathgen::{Path, Query};

/// Path A - B - Z. Edge A-B carries one abstract claiming an implausible
/// relation (A inhibits X), ranked first, and two good ones.
pub struct LoopFixture {
    pub g: TemporalGraph,
    pub lex: Lexicon,
    pub enc: ConceptMeanEncoder,
    pub pool: ComparisonPool,
    pub path: Path,
    pub query: Query,
}

pub fn loop_fixture() -> LoopFixture {
    let mut g = TemporalGraph::new();
    for d in [
        DocRecord::new("ab1", 2010, ["A", "B", "X"]).with_text("A inhibits X via B."),
        DocRecord::new("ab2", 2011, ["A", "B", "Y", "W"]).with_text("A activates B with Y and W."),
        DocRecord::new("ab3", 2012, ["A", "B", "Y", "W", "V"]).with_text("A binds B near Y, W and V."),
        DocRecord::new("bz1", 2010, ["B", "Z"]).with_text("B regulates Z."),
        DocRecord::new("az", 2022, ["A", "Z", "B"]).with_text("A affects Z."),
    ] {
        g.add_document(d).unwrap();
    }
    g.freeze();
    let view = g.snapshot(2021).unwrap();
    let ev = |a: &str, b: &str| -> Vec<DocId> {
        view.edge_evidence(&a.into(), &b.into())
            .unwrap()
            .into_iter()
            .map(|e| e.doc_id)
            .collect()
    };
    let path = Path {
        nodes: vec!["A".into(), "B".into(), "Z".into()],
        edge_contexts: vec![ev("A", "B"), ev("B", "Z")],
    };
    let lex = Lexicon::identity(&["A", "B", "V", "W", "X", "Y", "Z"].map(ConceptId::new));
    LoopFixture {
        enc: ConceptMeanEncoder::new("mock", lex.clone(), EmbeddingSource::Synthetic { dim: 32, seed: 5 }),
        pool: ComparisonPool::from_view(&view),
        g,
        lex,
        path,
        query: Query::new("A", "Z", 2022),
    }
}

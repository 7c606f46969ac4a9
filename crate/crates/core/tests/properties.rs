use std::collections::BTreeSet;

use proptest::prelude::*;

use hgcr_core::expl::metrics::{error_rate, jaccard_terms};
use hgcr_core::expl::{
    build_prompt, feedback_loop, Clients, ContextDoc, ExplainEnv, ExtractiveMock, FixtureOracle, KnownRelations,
    LoopConfig, Predicate, RetryPolicy, Template, VerbListExtractor, Verdict, VerdictStatus,
};
use hgcr_core::ireval::{average_precision, roc_auc};
use hgcr_core::kgraph::{ConceptId, DocId, DocRecord, TemporalGraph};
use hgcr_core::pathgen::{
    build_dataset, discover_queries, write_samples, DatasetMode, DatasetOptions, NegativeCaps, NegativeKind,
};
use hgcr_core::ranker::{forward, RankerConfig, RankerParams, SampleInput};
use hgcr_core::embed::Vector;

mod common;

type RawDoc = (i32, BTreeSet<u8>);

fn corpus_strategy(max_docs: usize, concepts: u8) -> impl Strategy<Value = Vec<RawDoc>> {
    prop::collection::vec(
        (2000i32..2006, prop::collection::btree_set(0..concepts, 1..5)),
        1..max_docs,
    )
}

fn build(raw: &[RawDoc], future: &[BTreeSet<u8>]) -> TemporalGraph {
    let mut g = TemporalGraph::new();
    for (i, (year, cs)) in raw.iter().enumerate() {
        g.add_document(DocRecord::new(format!("d{i}"), *year, cs.iter().map(|c| format!("c{c}"))))
            .unwrap();
    }
    for (i, cs) in future.iter().enumerate() {
        g.add_document(DocRecord::new(format!("f{i}"), 2006, cs.iter().map(|c| format!("c{c}"))))
            .unwrap();
    }
    g.freeze();
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snapshots_are_monotone_symmetric_loop_free(raw in corpus_strategy(60, 15)) {
        let g = build(&raw, &[]);
        for t in 1999..2006 {
            let now = g.snapshot(t).unwrap();
            let next = g.snapshot(t + 1).unwrap();
            for e in now.edges() {
                prop_assert!(e.u != e.v);
                prop_assert!(next.has_edge(&e.u, &e.v));
                prop_assert!(now.has_edge(&e.v, &e.u));
                prop_assert!(now.neighbors(&e.u).unwrap().contains(&e.v));
                prop_assert!(now.neighbors(&e.v).unwrap().contains(&e.u));
            }
        }
    }

    #[test]
    fn each_document_contributes_all_pairs(raw in corpus_strategy(60, 15)) {
        let g = build(&raw, &[]);
        let total: usize = g.edges().map(|e| e.evidence().count()).sum();
        let expected: usize = raw.iter().map(|(_, cs)| cs.len() * cs.len().saturating_sub(1) / 2).sum();
        prop_assert_eq!(total, expected);
    }

    #[test]
    fn dataset_negatives_are_well_formed(
        raw in corpus_strategy(80, 12),
        future in prop::collection::vec(prop::collection::btree_set(0u8..12, 3..7), 1..4),
        seed in any::<u64>(),
    ) {
        let g = build(&raw, &future);
        let queries = discover_queries(&g, 2006, None);
        let caps = NegativeCaps { neg_len3: 3, neg_len4: 4 };
        let opts = DatasetOptions { caps, mode: DatasetMode::Train, seed, ..Default::default() };
        let ds = build_dataset(&g, &queries, &opts);
        for q in &queries {
            let of_q: Vec<_> = ds.samples.iter().filter(|s| &s.query == q).collect();
            let positives: Vec<_> = of_q.iter().filter(|s| s.is_positive()).collect();
            let hard = |len: usize| of_q.iter().filter(|s| s.negative_kind == NegativeKind::Hard && s.path.nodes.len() == len).count();
            prop_assert!(hard(3) <= 3 && hard(4) <= 4);
            for s in &of_q {
                match s.negative_kind {
                    NegativeKind::CorruptedPath => {
                        prop_assert!(!s.is_positive());
                        let one_off = positives.iter().any(|p| {
                            p.path.nodes.len() == s.path.nodes.len()
                                && p.path.nodes.iter().zip(&s.path.nodes).filter(|(a, b)| a != b).count() == 1
                        });
                        prop_assert!(one_off, "{:?} is not one substitution away from a positive", s.path.nodes);
                    }
                    NegativeKind::CorruptedContext => {
                        prop_assert!(!s.is_positive());
                        let ctx: BTreeSet<&DocId> = s.contexts.iter().collect();
                        let broken = positives.iter().any(|p| {
                            p.path.nodes == s.path.nodes && !ctx.is_subset(&p.contexts.iter().collect())
                        });
                        prop_assert!(broken);
                    }
                    _ => {}
                }
            }
        }
        let report_for = |q| ds.reports.iter().find(|r| &r.query == q);
        for q in &queries {
            prop_assert!(report_for(q).is_some());
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_samples(&ds.samples, &mut a).unwrap();
        write_samples(&build_dataset(&g, &queries, &opts).samples, &mut b).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        items in prop::collection::vec((0u8..10, any::<bool>()), 2..20),
    ) {
        prop_assume!(items.iter().any(|i| i.1) && items.iter().any(|i| !i.1));
        let pairs: Vec<(f64, bool)> = items.iter().map(|&(s, l)| (s as f64 / 10.0, l)).collect();
        let moved: Vec<(f64, bool)> = pairs.iter().map(|&(s, l)| (s.powi(3) + 2.0 * s - 7.0, l)).collect();
        prop_assert_eq!(roc_auc(&pairs).unwrap(), roc_auc(&moved).unwrap());
    }

    #[test]
    fn flipped_labels_complement_auc_and_ap_is_bounded(labels in prop::collection::vec(any::<bool>(), 2..20), seed in any::<u64>()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        // distinct scores: a seeded permutation of 0..n
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let pairs: Vec<(f64, bool)> = order.iter().zip(&labels).map(|(&s, &l)| (s as f64, l)).collect();
        let flipped: Vec<(f64, bool)> = pairs.iter().map(|&(s, l)| (s, !l)).collect();
        let sum = roc_auc(&pairs).unwrap() + roc_auc(&flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        // the worst ranking puts every positive last
        let p = labels.iter().filter(|&&l| l).count();
        let floor = (1..=p).map(|i| i as f64 / (n - p + i) as f64).sum::<f64>() / p as f64;
        let ap = average_precision(&pairs).unwrap();
        prop_assert!(ap >= floor - 1e-12 && ap <= 1.0);
        let worst: Vec<(f64, bool)> = (0..n).map(|i| (i as f64, i < p)).collect();
        prop_assert!((average_precision(&worst).unwrap() - floor).abs() < 1e-12);
    }

    #[test]
    fn error_rate_bounded_and_zero_iff_all_plausible(statuses in prop::collection::vec(0u8..3, 0..12)) {
        let verdicts: Vec<Verdict> = statuses
            .iter()
            .enumerate()
            .map(|(i, &s)| Verdict {
                predicate: Predicate { subject: "a".into(), verb: "binds".into(), object: "b".into(), sentence_index: i },
                status: [VerdictStatus::Known, VerdictStatus::RankedValid, VerdictStatus::Implausible][s as usize],
                score: None,
                percentile_threshold: None,
            })
            .collect();
        let r = error_rate(&verdicts);
        prop_assert!((0.0..=1.0).contains(&r.value));
        prop_assert_eq!(r.value == 0.0, !statuses.contains(&2));
        prop_assert_eq!(r.no_predicates, statuses.is_empty());
    }

    #[test]
    fn jaccard_symmetric_bounded(a in prop::collection::btree_set(0u8..8, 0..6), b in prop::collection::btree_set(0u8..8, 0..6)) {
        let to = |s: &BTreeSet<u8>| s.iter().map(|x| ConceptId::new(format!("c{x}"))).collect::<BTreeSet<_>>();
        let (x, y) = (to(&a), to(&b));
        let j = jaccard_terms(&x, &y);
        prop_assert_eq!(j, jaccard_terms(&y, &x));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j == 1.0, x == y && !x.is_empty());
    }

    #[test]
    fn prompts_are_injective(
        a in (0usize..4, 0usize..4, prop::collection::vec(0usize..4, 0..4), any::<bool>()),
        b in (0usize..4, 0usize..4, prop::collection::vec(0usize..4, 0..4), any::<bool>()),
    ) {
        let names = ["A", "B", "Y", "Z"];
        let docs = [
            ("p1", "A activates B."),
            ("p2", "B regulates Z."),
            ("p3", "Y binds Z."),
            ("p4", "A inhibits Y."),
        ];
        let render = |(s, t, ctx, short): &(usize, usize, Vec<usize>, bool)| {
            let cds: Vec<ContextDoc> = ctx
                .iter()
                .map(|&i| ContextDoc { doc_id: DocId::new(docs[i].0), text: docs[i].1.to_string() })
                .collect();
            let template = if *short { Template::Short } else { Template::Baseline };
            build_prompt(&names[*s].into(), &names[*t].into(), &cds, template).rendered
        };
        prop_assert_eq!(a == b, render(&a) == render(&b));
    }

    #[test]
    fn feedback_traces_respect_their_contract(seed in any::<u64>(), k in 1usize..6, max_iter in 1usize..6) {
        let f = common::loop_fixture();
        let known = KnownRelations::new();
        let env = ExplainEnv { graph: &f.g, encoder: &f.enc, lexicon: &f.lex, known: &known, pool: &f.pool };
        let ex = VerbListExtractor::default();
        let oracle = FixtureOracle::new(seed);
        let clients = Clients { llm: &ExtractiveMock, extractor: &ex, oracle: &oracle };
        let cfg = LoopConfig { k, max_iter, seed, retry: RetryPolicy::immediate(1), ..Default::default() };
        let trace = match feedback_loop(&f.query, &f.path, &env, &clients, &cfg) {
            Ok((_, t)) => t,
            Err(fail) => *fail.trace,
        };
        prop_assert!(trace.iterations_used <= max_iter);
        prop_assert_eq!(trace.iterations_used, trace.iterations.len());
        if trace.converged {
            let last = trace.iterations.last().unwrap();
            prop_assert!(last.verdicts.iter().all(|v| v.status != VerdictStatus::Implausible));
        }
        let mut used: BTreeSet<DocId> = BTreeSet::new();
        for it in &trace.iterations {
            used.extend(it.context_doc_ids.iter().cloned());
            prop_assert!((0.0..=1.0).contains(&it.error_rate));
        }
        let mut seen: BTreeSet<DocId> = trace.iterations[0].context_doc_ids.iter().cloned().collect();
        for it in &trace.iterations {
            for r in &it.replacements {
                prop_assert!(seen.insert(r.new_doc.clone()), "{} was selected twice", r.new_doc);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>(), xs in prop::collection::vec(-1.0f64..1.0, 3 * 5 + 4 * 3)) {
        let config = RankerConfig { d_model: 4, heads: 2, d_n: 3, d_p: 5, margin: 0.3, lr: 0.01, epochs: 1, seed };
        let params = RankerParams::init(config).unwrap();
        let mut buf = Vec::new();
        params.write_checkpoint(&mut buf).unwrap();
        let back = RankerParams::read_checkpoint(buf.as_slice()).unwrap();
        let ctx: Vec<Vector> = xs[..15].chunks(5).map(|c| Vector::new(c.to_vec()).unwrap()).collect();
        let nodes: Vec<Vector> = xs[15..].chunks(3).map(|c| Vector::new(c.to_vec()).unwrap()).collect();
        let x = SampleInput::from_vectors(&ctx, &nodes).unwrap();
        prop_assert_eq!(forward(&params, &x).unwrap(), forward(&back, &x).unwrap());
    }
}

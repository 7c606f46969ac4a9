//! Synthetic corpora with a planted latent cluster, for end-to-end checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{synthetic_embed, EmbeddingTable, TableKind, Vector};
use crate::kgraph::{ConceptId, DocRecord, TemporalGraph};
use crate::pathgen::Query;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparableConfig {
    pub n_queries: usize,
    pub positives_per_query: usize,
    pub negatives_per_query: usize,
    pub dim: usize,
    /// Isotropic noise added to the cluster centers before normalizing.
    pub noise: f64,
    /// Seeds the cluster direction; shared between train and test corpora.
    pub world_seed: u64,
    /// Seeds the per-query draws.
    pub seed: u64,
    pub split_year: i32,
}

impl Default for SeparableConfig {
    fn default() -> Self {
        SeparableConfig {
            n_queries: 50,
            positives_per_query: 3,
            negatives_per_query: 60,
            dim: 16,
            noise: 0.6,
            world_seed: 7,
            seed: 1,
            split_year: 2022,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub graph: TemporalGraph,
    pub concepts: EmbeddingTable,
    pub queries: Vec<Query>,
}

fn noisy(center: &Vector, noise: f64, rng: &mut ChaCha8Rng) -> Vector {
    let v: Vec<f64> = center
        .values()
        .iter()
        .map(|c| c + noise * rng.gen_range(-1.0..1.0))
        .collect();
    Vector::new(v)
        .and_then(|v| v.normalized())
        .unwrap_or_else(|_| center.clone())
}

/// Per query `S_i -- T_i`: intermediates `P_ij` drawn near `+mu` link both
/// endpoints and co-occur with them in the future abstract; distractors
/// `D_ij` drawn near `-mu` link both endpoints but never appear in it.
/// Concept names carry `prefix` so train and test corpora stay disjoint.
pub fn separable_corpus(world: &SeparableConfig, prefix: &str) -> SyntheticCorpus {
    let mu = synthetic_embed("cluster", world.dim, world.world_seed);
    let anti = Vector::new(mu.values().iter().map(|x| -x).collect()).expect("finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(world.seed, "separable", 0));
    let mut graph = TemporalGraph::new();
    let mut concepts = EmbeddingTable::new(world.dim, TableKind::Concept);
    let mut queries = Vec::new();
    let mut doc_n = 0usize;
    let mut add = |g: &mut TemporalGraph, year: i32, cs: &[&str]| {
        doc_n += 1;
        let text = format!("This study mentions {}.", cs.join(" and "));
        g.add_document(DocRecord::new(format!("{prefix}d{doc_n:06}"), year, cs.iter().copied()).with_text(text))
            .expect("unique doc ids");
    };
    for i in 0..world.n_queries {
        let s = format!("{prefix}q{i:03}S");
        let t = format!("{prefix}q{i:03}T");
        for id in [&s, &t] {
            concepts
                .insert(id.clone(), synthetic_embed(id, world.dim, world.seed))
                .expect("fresh id");
        }
        let pos: Vec<String> = (0..world.positives_per_query).map(|j| format!("{prefix}q{i:03}P{j:02}")).collect();
        let neg: Vec<String> = (0..world.negatives_per_query).map(|j| format!("{prefix}q{i:03}D{j:02}")).collect();
        for p in &pos {
            concepts.insert(p.clone(), noisy(&mu, world.noise, &mut rng)).expect("fresh id");
        }
        for d in &neg {
            concepts.insert(d.clone(), noisy(&anti, world.noise, &mut rng)).expect("fresh id");
        }
        for (j, x) in pos.iter().chain(&neg).enumerate() {
            let year = world.split_year - 10 + (j % 10) as i32;
            add(&mut graph, year, &[&s, x]);
            add(&mut graph, year, &[x, &t]);
        }
        let mut future: Vec<&str> = vec![&s, &t];
        future.extend(pos.iter().map(String::as_str));
        add(&mut graph, world.split_year, &future);
        queries.push(Query::new(ConceptId::new(s), ConceptId::new(t), world.split_year));
    }
    graph.freeze();
    SyntheticCorpus {
        graph,
        concepts,
        queries,
    }
}

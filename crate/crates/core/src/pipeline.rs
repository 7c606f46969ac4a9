//! Glue between the dataset, ranker, metrics and explanation stages.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingSource;
use crate::expl::metrics::explanation_metrics;
use crate::expl::{build_prompt, ContextDoc, ExtractiveMock, LanguageModel, Lexicon, SamplingParams, Template, TextEncoder};
use crate::ireval::QueryResult;
use crate::kgraph::TemporalGraph;
use crate::pathgen::{future_reference, group_by_positive, LabeledPathSample, Query};
use crate::ranker::{encode_sample, forward, DocVectors, RankerError, RankerParams, SampleInput, TrainingGroup};
use crate::seed;

pub fn encode_all(
    samples: &[LabeledPathSample],
    g: &TemporalGraph,
    concepts: &EmbeddingSource,
    docs: &DocVectors,
) -> Result<Vec<SampleInput>, RankerError> {
    samples
        .par_iter()
        .map(|s| encode_sample(s, g, concepts, docs))
        .collect()
}

/// One group per positive, contrasted with every negative of its query.
pub fn training_groups(samples: &[LabeledPathSample], inputs: &[SampleInput]) -> Vec<TrainingGroup> {
    group_by_positive(samples)
        .into_iter()
        .map(|(p, negs)| TrainingGroup {
            positive: inputs[p].clone(),
            negatives: negs.iter().map(|&n| inputs[n].clone()).collect(),
        })
        .collect()
}

pub fn score_all(params: &RankerParams, inputs: &[SampleInput]) -> Result<Vec<f64>, RankerError> {
    inputs.par_iter().map(|x| forward(params, x)).collect()
}

/// Per-query `(score, is_positive)` lists in first-appearance order of queries.
pub fn query_results(samples: &[LabeledPathSample], scores: &[f64]) -> Vec<QueryResult> {
    let mut order: Vec<&Query> = Vec::new();
    let mut by_query: BTreeMap<&Query, Vec<(f64, bool)>> = BTreeMap::new();
    for (s, &score) in samples.iter().zip(scores) {
        by_query
            .entry(&s.query)
            .or_insert_with(|| {
                order.push(&s.query);
                Vec::new()
            })
            .push((score, s.is_positive()));
    }
    order
        .into_iter()
        .map(|q| QueryResult::new(q.to_string(), by_query[q].clone()))
        .collect()
}

/// Ordinary least-squares slope of `y` on `x`; `None` when `x` is constant.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub query: Query,
    pub positive: bool,
    pub path_nodes: Vec<String>,
    pub score: f64,
    pub sim: f64,
}

/// Picks up to `per_class` positive and negative samples per query (seeded),
/// explains each from its own contexts with the extractive generator and
/// pairs the ranker score with the explanation's similarity to the future
/// reference abstracts. Queries lacking either class are skipped.
#[allow(clippy::too_many_arguments)]
pub fn score_vs_sim(
    params: &RankerParams,
    samples: &[LabeledPathSample],
    inputs: &[SampleInput],
    g: &TemporalGraph,
    encoder: &dyn TextEncoder,
    lexicon: &Lexicon,
    per_class: usize,
    base_seed: u64,
) -> Result<Vec<ScatterPoint>, RankerError> {
    let mut order: Vec<&Query> = Vec::new();
    let mut by_query: BTreeMap<&Query, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let e = by_query.entry(&s.query).or_insert_with(|| {
            order.push(&s.query);
            Default::default()
        });
        if s.is_positive() {
            e.0.push(i);
        } else {
            e.1.push(i);
        }
    }
    let mut picked = Vec::new();
    for (qi, q) in order.iter().enumerate() {
        let (pos, neg) = &by_query[q];
        let n = per_class.min(pos.len()).min(neg.len());
        if n == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(base_seed, "score_vs_sim", qi as u64));
        picked.extend(pos.choose_multiple(&mut rng, n).copied());
        picked.extend(neg.choose_multiple(&mut rng, n).copied());
    }
    picked
        .par_iter()
        .map(|&i| {
            let s = &samples[i];
            let score = forward(params, &inputs[i])?;
            let ctx: Vec<ContextDoc> = s
                .contexts
                .iter()
                .filter_map(|d| g.document(d))
                .map(ContextDoc::from_record)
                .collect();
            let prompt = build_prompt(&s.query.source, &s.query.target, &ctx, Template::Short);
            let text = ExtractiveMock
                .complete(&SamplingParams::default().request(&prompt.rendered))
                .map(|r| r.text)
                .unwrap_or_default();
            let refs: Vec<_> = future_reference(g, &s.query)
                .map(|fr| fr.abstracts.into_iter().collect())
                .unwrap_or_default();
            let m = explanation_metrics(&text, &refs, g, lexicon, &[encoder], &[]);
            Ok(ScatterPoint {
                query: s.query.clone(),
                positive: s.is_positive(),
                path_nodes: s.path.nodes.iter().map(|c| c.as_str().to_string()).collect(),
                score,
                sim: m.sims.get(encoder.name()).copied().unwrap_or(0.0),
            })
        })
        .collect()
}

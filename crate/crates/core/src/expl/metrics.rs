//! Explanation quality metrics and convergence summaries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::feedback::FeedbackTrace;
use super::text::{Lexicon, TextEncoder};
use super::validate::{Verdict, VerdictStatus};
use crate::embed::{dot, EmbedError, Vector};
use crate::kgraph::{ConceptId, DocId, TemporalGraph};

/// |A ∩ B| / |A ∪ B|, and 0 when both are empty.
pub fn jaccard_terms(a: &BTreeSet<ConceptId>, b: &BTreeSet<ConceptId>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn semantic_sim(expl: &Vector, reference: &Vector) -> Result<f64, EmbedError> {
    dot(expl, reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRate {
    pub value: f64,
    /// Nothing was extracted, so the rate is 0 by convention.
    pub no_predicates: bool,
}

pub fn error_rate(verdicts: &[Verdict]) -> ErrorRate {
    if verdicts.is_empty() {
        return ErrorRate {
            value: 0.0,
            no_predicates: true,
        };
    }
    let bad = verdicts
        .iter()
        .filter(|v| v.status == VerdictStatus::Implausible)
        .count();
    ErrorRate {
        value: bad as f64 / verdicts.len() as f64,
        no_predicates: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMetrics {
    pub jaccard: f64,
    pub sims: BTreeMap<String, f64>,
    pub error_rate: f64,
    pub no_predicates: bool,
}

/// Scores an explanation against reference abstracts. Term overlap uses all
/// concepts of the reference abstracts; similarity is the mean dot product
/// with each reference document vector, per encoder.
pub fn explanation_metrics(
    text: &str,
    reference_docs: &[DocId],
    g: &TemporalGraph,
    lexicon: &Lexicon,
    encoders: &[&dyn TextEncoder],
    verdicts: &[Verdict],
) -> ExplanationMetrics {
    let refs: Vec<_> = reference_docs.iter().filter_map(|d| g.document(d)).collect();
    let ref_terms: BTreeSet<ConceptId> = refs.iter().flat_map(|d| d.concepts.iter().cloned()).collect();
    let jaccard = jaccard_terms(&lexicon.detect_set(text), &ref_terms);
    let mut sims = BTreeMap::new();
    for enc in encoders {
        let sim = enc
            .embed_text(text)
            .map(|e| {
                let vals: Vec<f64> = refs
                    .iter()
                    .filter_map(|d| enc.embed_doc(d))
                    .filter_map(|r| semantic_sim(&e, &r).ok())
                    .collect();
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            })
            .unwrap_or(0.0);
        sims.insert(enc.name().to_string(), sim);
    }
    let er = error_rate(verdicts);
    ExplanationMetrics {
        jaccard,
        sims,
        error_rate: er.value,
        no_predicates: er.no_predicates,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub max_iter: usize,
    /// `counts[i]` traces converged after `i + 1` iterations.
    pub counts: Vec<usize>,
    pub dnf: usize,
}

impl ConvergenceReport {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.dnf
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("iterations\ttraces\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{}\t{c}\n", i + 1));
        }
        s.push_str(&format!("dnf\t{}\n", self.dnf));
        s
    }
}

pub fn convergence_report(traces: &[FeedbackTrace], max_iter: usize) -> ConvergenceReport {
    let mut counts = vec![0; max_iter];
    let mut dnf = 0;
    for t in traces {
        match t.iterations_used {
            n if t.converged && (1..=max_iter).contains(&n) => counts[n - 1] += 1,
            _ => dnf += 1,
        }
    }
    ConvergenceReport { max_iter, counts, dnf }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{synthetic_embed, EmbeddingSource};
    use crate::expl::feedback::LoopMode;
    use crate::expl::text::ConceptMeanEncoder;
    use crate::expl::validate::Predicate;
    use crate::pathgen::Query;

    fn set(xs: &[&str]) -> BTreeSet<ConceptId> {
        xs.iter().map(|x| ConceptId::new(*x)).collect()
    }

    #[test]
    fn jaccard_examples() {
        assert!((jaccard_terms(&set(&["A", "B"]), &set(&["B", "C"])) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard_terms(&set(&["A", "B"]), &set(&["A", "B"])), 1.0);
        assert_eq!(jaccard_terms(&set(&["A"]), &set(&["B"])), 0.0);
        assert_eq!(jaccard_terms(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn sim_examples() {
        let a = Vector::new(vec![1.0, 0.0]).unwrap();
        let b = Vector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(semantic_sim(&a, &a).unwrap(), 1.0);
        assert_eq!(semantic_sim(&a, &b).unwrap(), 0.0);
        let (va, vz) = (synthetic_embed("A", 8, 2), synthetic_embed("Z", 8, 2));
        let m = Vector::mean([&va, &vz]).unwrap().normalized().unwrap();
        let enc = ConceptMeanEncoder::new(
            "mock",
            Lexicon::identity(&set(&["A", "Z"])),
            EmbeddingSource::Synthetic { dim: 8, seed: 2 },
        );
        let t = enc.embed_text("A Z").unwrap();
        assert!((semantic_sim(&t, &m).unwrap() - 1.0).abs() < 1e-12);
    }

    fn verdict(st: VerdictStatus) -> Verdict {
        Verdict {
            predicate: Predicate {
                subject: "A".into(),
                verb: "affects".into(),
                object: "B".into(),
                sentence_index: 0,
            },
            status: st,
            score: None,
            percentile_threshold: None,
        }
    }

    #[test]
    fn error_rate_examples() {
        let mut v = vec![verdict(VerdictStatus::Implausible); 2];
        v.extend(vec![verdict(VerdictStatus::RankedValid); 6]);
        assert_eq!(error_rate(&v).value, 0.25);
        assert_eq!(error_rate(&v[2..]).value, 0.0);
        let none = error_rate(&[]);
        assert_eq!(none.value, 0.0);
        assert!(none.no_predicates);
    }

    fn trace(used: usize, converged: bool) -> FeedbackTrace {
        FeedbackTrace {
            query: Query::new("A", "Z", 2022),
            path_nodes: vec![],
            mode: LoopMode::Feedback,
            max_iter: 5,
            short_context: false,
            iterations: vec![],
            converged,
            iterations_used: used,
        }
    }

    #[test]
    fn convergence_examples() {
        let r = convergence_report(&[trace(1, true), trace(1, true), trace(2, true)], 5);
        assert_eq!((r.counts[0], r.counts[1], r.dnf), (2, 1, 0));
        let r = convergence_report(&[trace(5, false)], 5);
        assert_eq!(r.dnf, 1);
        let r = convergence_report(&[], 5);
        assert_eq!((r.counts, r.dnf), (vec![0; 5], 0));
    }
}

//! Predicate extraction, plausibility oracles and verdicts.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::text::{words, Lexicon};
use super::{Explanation, ExplError};
use crate::kgraph::{ConceptId, SnapshotView};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub subject: ConceptId,
    pub verb: String,
    pub object: ConceptId,
    pub sentence_index: usize,
}

pub trait PredicateExtractor: Send + Sync {
    fn extract(&self, explanation: &Explanation, lexicon: &Lexicon) -> Vec<Predicate>;
}

pub const DEFAULT_VERBS: &[&str] = &[
    "activates",
    "affects",
    "associated",
    "binds",
    "causes",
    "decreases",
    "increases",
    "induces",
    "inhibits",
    "interacts",
    "modulates",
    "prevents",
    "reduces",
    "regulates",
    "stimulates",
    "treats",
];

/// Emits `(first concept, first listed verb, second concept)` for every
/// sentence holding at least two lexicon concepts and a listed verb.
#[derive(Debug, Clone)]
pub struct VerbListExtractor {
    verbs: BTreeSet<String>,
}

impl Default for VerbListExtractor {
    fn default() -> Self {
        Self::new(DEFAULT_VERBS.iter().copied())
    }
}

impl VerbListExtractor {
    pub fn new<'a, I: IntoIterator<Item = &'a str>>(verbs: I) -> Self {
        VerbListExtractor {
            verbs: verbs.into_iter().map(str::to_lowercase).collect(),
        }
    }
}

impl PredicateExtractor for VerbListExtractor {
    fn extract(&self, explanation: &Explanation, lexicon: &Lexicon) -> Vec<Predicate> {
        let mut out = Vec::new();
        for (i, sentence) in explanation.sentences.iter().enumerate() {
            let concepts = lexicon.detect(sentence);
            if concepts.len() < 2 {
                continue;
            }
            let Some(verb) = words(sentence).into_iter().find(|w| self.verbs.contains(w)) else {
                continue;
            };
            out.push(Predicate {
                subject: concepts[0].clone(),
                verb,
                object: concepts[1].clone(),
                sentence_index: i,
            });
        }
        out
    }
}

pub trait PlausibilityOracle: Send + Sync {
    fn score(&self, subject: &ConceptId, object: &ConceptId) -> Result<f64, ExplError>;
}

impl<F> PlausibilityOracle for F
where
    F: Fn(&ConceptId, &ConceptId) -> Result<f64, ExplError> + Send + Sync,
{
    fn score(&self, subject: &ConceptId, object: &ConceptId) -> Result<f64, ExplError> {
        self(subject, object)
    }
}

fn unordered(a: &ConceptId, b: &ConceptId) -> (ConceptId, ConceptId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Fixed plausible/implausible pairs; any other pair gets a symmetric hashed
/// score in [0.2, 0.8).
#[derive(Debug, Clone, Default)]
pub struct FixtureOracle {
    plausible: BTreeSet<(ConceptId, ConceptId)>,
    implausible: BTreeSet<(ConceptId, ConceptId)>,
    seed: u64,
}

impl FixtureOracle {
    pub fn new(seed: u64) -> Self {
        FixtureOracle {
            seed,
            ..Default::default()
        }
    }

    pub fn plausible(mut self, a: impl Into<ConceptId>, b: impl Into<ConceptId>) -> Self {
        self.plausible.insert(unordered(&a.into(), &b.into()));
        self
    }

    pub fn implausible(mut self, a: impl Into<ConceptId>, b: impl Into<ConceptId>) -> Self {
        self.implausible.insert(unordered(&a.into(), &b.into()));
        self
    }
}

impl PlausibilityOracle for FixtureOracle {
    fn score(&self, subject: &ConceptId, object: &ConceptId) -> Result<f64, ExplError> {
        let key = unordered(subject, object);
        if self.plausible.contains(&key) {
            return Ok(1.0);
        }
        if self.implausible.contains(&key) {
            return Ok(0.0);
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.0.as_str().as_bytes());
        h.update([0u8]);
        h.update(key.1.as_str().as_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().expect("digest length")) >> 11;
        Ok(0.2 + 0.6 * (x as f64 / (1u64 << 53) as f64))
    }
}

/// Unordered concept pairs treated as already established.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnownRelations(BTreeSet<(ConceptId, ConceptId)>);

impl KnownRelations {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every edge of the snapshot.
    pub fn from_view(view: &SnapshotView<'_>) -> Self {
        KnownRelations(view.edges().map(|e| unordered(&e.u, &e.v)).collect())
    }

    pub fn insert(&mut self, a: &ConceptId, b: &ConceptId) {
        self.0.insert(unordered(a, b));
    }

    pub fn contains(&self, a: &ConceptId, b: &ConceptId) -> bool {
        self.0.contains(&unordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Node set plus adjacency used to draw comparison pairs.
#[derive(Debug, Clone, Default)]
pub struct ComparisonPool {
    nodes: Vec<ConceptId>,
    adjacency: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
}

impl ComparisonPool {
    pub fn from_view(view: &SnapshotView<'_>) -> Self {
        let mut adjacency: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
        for e in view.edges() {
            adjacency.entry(e.u.clone()).or_default().insert(e.v.clone());
            adjacency.entry(e.v.clone()).or_default().insert(e.u.clone());
        }
        ComparisonPool {
            nodes: view.nodes().cloned().collect(),
            adjacency,
        }
    }

    pub fn from_nodes<I: IntoIterator<Item = ConceptId>>(nodes: I) -> Self {
        let mut nodes: Vec<ConceptId> = nodes.into_iter().collect();
        nodes.sort();
        nodes.dedup();
        ComparisonPool {
            nodes,
            adjacency: BTreeMap::new(),
        }
    }

    /// Concepts within two hops of `subject`, excluding the subject itself.
    pub fn two_hop(&self, subject: &ConceptId) -> Vec<ConceptId> {
        let mut out = BTreeSet::new();
        if let Some(n1) = self.adjacency.get(subject) {
            for a in n1 {
                out.insert(a.clone());
                if let Some(n2) = self.adjacency.get(a) {
                    out.extend(n2.iter().cloned());
                }
            }
        }
        out.remove(subject);
        out.into_iter().collect()
    }

    /// `n` partner concepts for `subject`, drawn with replacement from the
    /// two-hop neighborhood, or from all other nodes when that is empty.
    pub fn sample_partners(&self, subject: &ConceptId, object: &ConceptId, n: usize, seed: u64) -> Vec<ConceptId> {
        let mut pool: Vec<ConceptId> = self.two_hop(subject).into_iter().filter(|c| c != object).collect();
        if pool.is_empty() {
            pool = self
                .nodes
                .iter()
                .filter(|c| *c != subject && *c != object)
                .cloned()
                .collect();
        }
        if pool.is_empty() {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| pool.choose(&mut rng).expect("non-empty").clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Known,
    RankedValid,
    Implausible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub predicate: Predicate,
    pub status: VerdictStatus,
    pub score: Option<f64>,
    pub percentile_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub n_comparison: usize,
    pub top_frac: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            n_comparison: 100,
            top_frac: 0.10,
        }
    }
}

/// Nearest-rank `(1 - top_frac)` quantile of `scores`.
pub fn upper_quantile(scores: &[f64], top_frac: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let rank = (((1.0 - top_frac) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(s[rank - 1])
}

pub fn validate(
    oracle: &dyn PlausibilityOracle,
    predicate: &Predicate,
    known: &KnownRelations,
    pool: &ComparisonPool,
    cfg: &ValidationConfig,
    seed: u64,
) -> Result<Verdict, ExplError> {
    if known.contains(&predicate.subject, &predicate.object) {
        return Ok(Verdict {
            predicate: predicate.clone(),
            status: VerdictStatus::Known,
            score: None,
            percentile_threshold: None,
        });
    }
    let score = oracle.score(&predicate.subject, &predicate.object)?;
    let partners = pool.sample_partners(&predicate.subject, &predicate.object, cfg.n_comparison, seed);
    let comparison = partners
        .iter()
        .map(|x| oracle.score(&predicate.subject, x))
        .collect::<Result<Vec<f64>, _>>()?;
    let threshold = upper_quantile(&comparison, cfg.top_frac);
    let valid = threshold.is_none_or(|t| score >= t);
    Ok(Verdict {
        predicate: predicate.clone(),
        status: if valid {
            VerdictStatus::RankedValid
        } else {
            VerdictStatus::Implausible
        },
        score: Some(score),
        percentile_threshold: threshold,
    })
}

/// Sentences owning at least one implausible predicate.
pub fn flag_rework(verdicts: &[Verdict]) -> BTreeSet<usize> {
    verdicts
        .iter()
        .filter(|v| v.status == VerdictStatus::Implausible)
        .map(|v| v.predicate.sentence_index)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgraph::{DocRecord, TemporalGraph};

    fn c(s: &str) -> ConceptId {
        ConceptId::new(s)
    }

    fn pred(s: &str, o: &str, i: usize) -> Predicate {
        Predicate {
            subject: c(s),
            verb: "affects".into(),
            object: c(o),
            sentence_index: i,
        }
    }

    fn pool() -> ComparisonPool {
        ComparisonPool::from_nodes(["A", "B", "C", "D", "Z"].map(ConceptId::new))
    }

    #[test]
    fn extraction_examples() {
        let lex = Lexicon::identity(&[c("A"), c("B"), c("Z")]);
        let ex = VerbListExtractor::new(["inhibits", "affects"]);
        assert_eq!(
            ex.extract(&Explanation::new("A inhibits Z."), &lex),
            vec![Predicate {
                subject: c("A"),
                verb: "inhibits".into(),
                object: c("Z"),
                sentence_index: 0
            }]
        );
        assert!(ex.extract(&Explanation::new("A inhibits things."), &lex).is_empty());
        let two = ex.extract(&Explanation::new("B affects A. A inhibits Z."), &lex);
        assert_eq!(two.iter().map(|p| p.sentence_index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!((two[0].subject.as_str(), two[0].object.as_str()), ("B", "A"));
    }

    #[test]
    fn known_pair_skips_oracle() {
        struct Panics;
        impl PlausibilityOracle for Panics {
            fn score(&self, _: &ConceptId, _: &ConceptId) -> Result<f64, ExplError> {
                panic!("oracle must not be called")
            }
        }
        let mut known = KnownRelations::new();
        known.insert(&c("Z"), &c("A"));
        let v = validate(&Panics, &pred("A", "Z", 0), &known, &pool(), &ValidationConfig::default(), 1).unwrap();
        assert_eq!(v.status, VerdictStatus::Known);
        assert_eq!(v.score, None);
    }

    #[test]
    fn top_and_bottom_of_comparison_set() {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let top = |s: &ConceptId, o: &ConceptId| -> Result<f64, ExplError> {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(if s.as_str() == "A" && o.as_str() == "Z" { 1.0 } else { 0.0 })
        };
        let known = KnownRelations::new();
        let cfg = ValidationConfig::default();
        let v = validate(&top, &pred("A", "Z", 0), &known, &pool(), &cfg, 9).unwrap();
        assert_eq!(v.status, VerdictStatus::RankedValid);
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 101);
        let bottom = |s: &ConceptId, o: &ConceptId| -> Result<f64, ExplError> {
            Ok(if s.as_str() == "A" && o.as_str() == "Z" { 0.0 } else { 1.0 })
        };
        let v = validate(&bottom, &pred("A", "Z", 0), &known, &pool(), &cfg, 9).unwrap();
        assert_eq!(v.status, VerdictStatus::Implausible);
        assert_eq!(v.percentile_threshold, Some(1.0));
    }

    #[test]
    fn quantile_is_inclusive_nearest_rank() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(upper_quantile(&s, 0.10), Some(90.0));
        assert_eq!(upper_quantile(&[5.0], 0.10), Some(5.0));
        assert_eq!(upper_quantile(&[], 0.10), None);
    }

    #[test]
    fn partners_come_from_two_hop_neighborhood() {
        let mut g = TemporalGraph::new();
        g.add_document(DocRecord::new("1", 2000, ["A", "B"])).unwrap();
        g.add_document(DocRecord::new("2", 2000, ["B", "C"])).unwrap();
        g.add_document(DocRecord::new("3", 2000, ["C", "D"])).unwrap();
        g.freeze();
        let p = ComparisonPool::from_view(&g.snapshot(2000).unwrap());
        assert_eq!(p.two_hop(&c("A")), vec![c("B"), c("C")]);
        let draws = p.sample_partners(&c("A"), &c("Z"), 50, 3);
        assert_eq!(draws.len(), 50);
        assert!(draws.iter().all(|x| x == &c("B") || x == &c("C")));
        assert_eq!(draws, p.sample_partners(&c("A"), &c("Z"), 50, 3));
    }

    #[test]
    fn rework_flags_are_a_set() {
        let mk = |i, st| Verdict {
            predicate: pred("A", "B", i),
            status: st,
            score: None,
            percentile_threshold: None,
        };
        assert!(flag_rework(&[mk(0, VerdictStatus::RankedValid)]).is_empty());
        assert_eq!(flag_rework(&[mk(2, VerdictStatus::Implausible)]), BTreeSet::from([2]));
        assert_eq!(
            flag_rework(&[mk(1, VerdictStatus::Implausible), mk(1, VerdictStatus::Implausible)]),
            BTreeSet::from([1])
        );
    }

    #[test]
    fn fixture_oracle_is_symmetric_and_bounded() {
        let o = FixtureOracle::new(4).plausible("A", "B").implausible("C", "A");
        assert_eq!(o.score(&c("B"), &c("A")).unwrap(), 1.0);
        assert_eq!(o.score(&c("A"), &c("C")).unwrap(), 0.0);
        let x = o.score(&c("X"), &c("Y")).unwrap();
        assert_eq!(x, o.score(&c("Y"), &c("X")).unwrap());
        assert!((0.2..0.8).contains(&x));
    }
}

//! Ranking metrics: exact ROC AUC and average precision, with micro and
//! macro aggregation across queries.
//!
//! Ties: AUC gives half credit to tied positive/negative pairs. AP orders by
//! score descending with a stable sort, so tied items keep their input order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("need at least one positive and one negative")]
    DegenerateLabels,
    #[error("no positive labels")]
    NoPositives,
    #[error("every query is degenerate")]
    AllDegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RocAuc,
    AveragePrecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Micro,
    Macro,
}

/// Scored, labeled items for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub pairs: Vec<(f64, bool)>,
}

impl QueryResult {
    pub fn new(query_id: impl Into<String>, pairs: Vec<(f64, bool)>) -> Self {
        QueryResult {
            query_id: query_id.into(),
            pairs,
        }
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.1).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    pub fn is_degenerate(&self) -> bool {
        self.positives() == 0 || self.negatives() == 0
    }
}

/// Exact rank-based AUC: P(s⁺ > s⁻) + ½·P(s⁺ = s⁻).
pub fn roc_auc(pairs: &[(f64, bool)]) -> Result<f64, MetricError> {
    let n_pos = pairs.iter().filter(|p| p.1).count() as u64;
    let n_neg = pairs.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the number of correctly ordered pairs, counting ties as one.
    let mut twice_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_wins += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// Mean over positives of the precision at each positive's rank.
pub fn average_precision(pairs: &[(f64, bool)]) -> Result<f64, MetricError> {
    let n_pos = pairs.iter().filter(|p| p.1).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[b].0.total_cmp(&pairs[a].0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if pairs[idx].1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

pub fn metric_value(metric: Metric, pairs: &[(f64, bool)]) -> Result<f64, MetricError> {
    match metric {
        Metric::RocAuc => roc_auc(pairs),
        Metric::AveragePrecision => average_precision(pairs),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub value: f64,
    /// Queries excluded from a macro average for lacking positives or negatives.
    pub skipped: usize,
}

pub fn aggregate(
    results: &[QueryResult],
    mode: Averaging,
    metric: Metric,
) -> Result<Aggregate, MetricError> {
    match mode {
        Averaging::Micro => {
            let pooled: Vec<(f64, bool)> = results.iter().flat_map(|r| r.pairs.iter().copied()).collect();
            let value = metric_value(metric, &pooled).map_err(|_| MetricError::AllDegenerate)?;
            Ok(Aggregate { value, skipped: 0 })
        }
        Averaging::Macro => {
            let mut values = Vec::new();
            let mut skipped = 0;
            for r in results {
                if r.is_degenerate() {
                    skipped += 1;
                    continue;
                }
                values.push(metric_value(metric, &r.pairs)?);
            }
            if values.is_empty() {
                return Err(MetricError::AllDegenerate);
            }
            Ok(Aggregate {
                value: values.iter().sum::<f64>() / values.len() as f64,
                skipped,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    pub positives: usize,
    pub negatives: usize,
    pub roc_auc: Option<f64>,
    pub average_precision: Option<f64>,
    pub tied_scores: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_auc: Option<f64>,
    pub macro_auc: Option<f64>,
    pub micro_ap: Option<f64>,
    pub macro_ap: Option<f64>,
    pub skipped_queries: usize,
    pub prevalence: f64,
    pub queries: Vec<QueryRow>,
}

impl MetricsReport {
    pub fn compute(results: &[QueryResult]) -> Self {
        let get = |mode, metric| aggregate(results, mode, metric).ok();
        let queries = results
            .iter()
            .map(|r| {
                let mut scores: Vec<f64> = r.pairs.iter().map(|p| p.0).collect();
                scores.sort_by(f64::total_cmp);
                let tied = scores.windows(2).any(|w| w[0] == w[1]);
                let degenerate = r.is_degenerate();
                QueryRow {
                    query_id: r.query_id.clone(),
                    positives: r.positives(),
                    negatives: r.negatives(),
                    roc_auc: (!degenerate).then(|| roc_auc(&r.pairs).ok()).flatten(),
                    average_precision: (!degenerate)
                        .then(|| average_precision(&r.pairs).ok())
                        .flatten(),
                    tied_scores: tied,
                }
            })
            .collect();
        let total: usize = results.iter().map(|r| r.pairs.len()).sum();
        let pos: usize = results.iter().map(|r| r.positives()).sum();
        MetricsReport {
            micro_auc: get(Averaging::Micro, Metric::RocAuc).map(|a| a.value),
            macro_auc: get(Averaging::Macro, Metric::RocAuc).map(|a| a.value),
            micro_ap: get(Averaging::Micro, Metric::AveragePrecision).map(|a| a.value),
            macro_ap: get(Averaging::Macro, Metric::AveragePrecision).map(|a| a.value),
            skipped_queries: results.iter().filter(|r| r.is_degenerate()).count(),
            prevalence: if total == 0 { 0.0 } else { pos as f64 / total as f64 },
            queries,
        }
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "ROC AUC  micro {}  macro {}", fmt(self.micro_auc), fmt(self.macro_auc));
        let _ = writeln!(s, "AP       micro {}  macro {}", fmt(self.micro_ap), fmt(self.macro_ap));
        let _ = writeln!(s, "prevalence {:.4}  skipped queries {}", self.prevalence, self.skipped_queries);
        let _ = writeln!(s, "{:<40} {:>5} {:>5} {:>8} {:>8} ties", "query", "pos", "neg", "auc", "ap");
        for q in &self.queries {
            let _ = writeln!(
                s,
                "{:<40} {:>5} {:>5} {:>8} {:>8} {}",
                q.query_id,
                q.positives,
                q.negatives,
                fmt(q.roc_auc),
                fmt(q.average_precision),
                if q.tied_scores { "yes" } else { "no" }
            );
        }
        s
    }
}

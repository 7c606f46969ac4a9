//! Python bindings: graph construction, path datasets, the ranker, ranking
//! metrics, the explanation loop over mock clients, and the CLI entry point.

use std::fs::File;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hgcr_core::embed::{EmbeddingSource, Vector};
use hgcr_core::expl::{
    feedback_loop, Clients, ComparisonPool, ConceptMeanEncoder, ExplainEnv, ExtractiveMock, FixtureOracle,
    KnownRelations, Lexicon, LoopConfig, VerbListExtractor,
};
use hgcr_core::ireval::{average_precision as ap, roc_auc as auc, MetricsReport, QueryResult};
use hgcr_core::kgraph::{DocRecord, TemporalGraph};
use hgcr_core::pathgen::{
    build_dataset, discover_queries, enumerate_candidate_paths, DatasetMode, DatasetOptions, NegativeCaps, Path,
    Query,
};
use hgcr_core::ranker::{forward, train, RankerConfig, RankerParams, SampleInput, TrainingGroup};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Cumulative co-occurrence graph; frozen once built.
#[pyclass(name = "TemporalGraph", frozen)]
struct PyGraph(TemporalGraph);

#[pymethods]
impl PyGraph {
    /// Reads a JSON-lines corpus of `{doc_id, year, concepts, text?}` records.
    #[staticmethod]
    fn from_jsonl(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let mut g = TemporalGraph::read_corpus(f).map_err(value_err)?;
        g.freeze();
        Ok(PyGraph(g))
    }

    /// Builds from `(doc_id, year, concepts, text)` tuples; `text` may be None.
    #[staticmethod]
    fn from_records(records: Vec<(String, i32, Vec<String>, Option<String>)>) -> PyResult<Self> {
        let mut g = TemporalGraph::new();
        for (id, year, concepts, text) in records {
            let mut d = DocRecord::new(id, year, concepts);
            if let Some(t) = text {
                d = d.with_text(t);
            }
            g.add_document(d).map_err(value_err)?;
        }
        g.freeze();
        Ok(PyGraph(g))
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.0.edge_count()
    }

    #[getter]
    fn doc_count(&self) -> usize {
        self.0.doc_count()
    }

    fn year_bounds(&self) -> Option<(i32, i32)> {
        self.0.year_bounds()
    }

    /// `(u, v, first_year)` for every edge present at year `t`.
    fn edges(&self, t: i32) -> PyResult<Vec<(String, String, i32)>> {
        let view = self.0.snapshot(t).map_err(value_err)?;
        Ok(view
            .edges()
            .map(|e| (e.u.to_string(), e.v.to_string(), e.first_year()))
            .collect())
    }

    fn neighbors(&self, concept: &str, t: i32) -> PyResult<Vec<String>> {
        let view = self.0.snapshot(t).map_err(value_err)?;
        let n = view.neighbors(&concept.into()).map_err(value_err)?;
        Ok(n.into_iter().map(|c| c.to_string()).collect())
    }

    /// Pairs first connected at `from_year` or later, as `(source, target, year)`.
    fn discover_queries(&self, from_year: i32) -> Vec<(String, String, i32)> {
        discover_queries(&self.0, from_year, None)
            .into_iter()
            .map(|q| (q.source.to_string(), q.target.to_string(), q.t))
            .collect()
    }

    /// Simple paths in the snapshot before `t`, as node lists.
    #[pyo3(signature = (source, target, t, max_nodes = 4))]
    fn candidate_paths(&self, source: &str, target: &str, t: i32, max_nodes: usize) -> PyResult<Vec<Vec<String>>> {
        let view = self.0.snapshot(t - 1).map_err(value_err)?;
        let q = Query::new(source, target, t);
        let paths = enumerate_candidate_paths(&view, &q, max_nodes, None).map_err(value_err)?;
        Ok(paths
            .into_iter()
            .map(|p| p.nodes.iter().map(|c| c.to_string()).collect())
            .collect())
    }

    /// Labeled samples for all queries at or after `split_year`, as dicts.
    #[pyo3(signature = (split_year, mode = "train", seed = 0, neg_len3 = 100, neg_len4 = 100))]
    fn build_dataset<'py>(
        &self,
        py: Python<'py>,
        split_year: i32,
        mode: &str,
        seed: u64,
        neg_len3: usize,
        neg_len4: usize,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mode = match mode {
            "train" => DatasetMode::Train,
            "test" => DatasetMode::Test,
            other => return Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
        };
        let queries = hgcr_core::cli::split_queries(&self.0, split_year);
        let opts = DatasetOptions {
            caps: NegativeCaps { neg_len3, neg_len4 },
            mode,
            seed,
            sampling_cutoff: Some(split_year - 1),
            ..Default::default()
        };
        let ds = build_dataset(&self.0, &queries, &opts);
        ds.samples
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("query", (s.query.source.to_string(), s.query.target.to_string(), s.query.t))?;
                d.set_item("nodes", s.path.nodes.iter().map(|c| c.to_string()).collect::<Vec<_>>())?;
                d.set_item("contexts", s.contexts.iter().map(|c| c.to_string()).collect::<Vec<_>>())?;
                d.set_item("positive", s.is_positive())?;
                d.set_item("kind", serde_kind(s.negative_kind))?;
                Ok(d)
            })
            .collect()
    }

    /// Runs the explanation loop on one path with the extractive mock
    /// generator and a seeded fixture oracle; returns the trace as JSON.
    #[pyo3(signature = (source, target, t, nodes, k = 7, max_iter = 5, seed = 0, baseline = false))]
    #[allow(clippy::too_many_arguments)]
    fn explain(
        &self,
        source: &str,
        target: &str,
        t: i32,
        nodes: Vec<String>,
        k: usize,
        max_iter: usize,
        seed: u64,
        baseline: bool,
    ) -> PyResult<String> {
        let g = &self.0;
        let view = g.snapshot(t - 1).map_err(value_err)?;
        let path = Path {
            edge_contexts: nodes
                .windows(2)
                .map(|w| {
                    view.edge_evidence(&w[0].as_str().into(), &w[1].as_str().into())
                        .map(|ev| ev.into_iter().map(|e| e.doc_id).collect())
                })
                .collect::<Result<_, _>>()
                .map_err(value_err)?,
            nodes: nodes.into_iter().map(Into::into).collect(),
        };
        let lexicon = Lexicon::identity(g.nodes());
        let encoder = ConceptMeanEncoder::new("concept_mean", lexicon.clone(), EmbeddingSource::Synthetic { dim: 32, seed });
        let known = KnownRelations::from_view(&view);
        let pool = ComparisonPool::from_view(&view);
        let env = ExplainEnv {
            graph: g,
            encoder: &encoder,
            lexicon: &lexicon,
            known: &known,
            pool: &pool,
        };
        let extractor = VerbListExtractor::default();
        let oracle = FixtureOracle::new(seed);
        let clients = Clients {
            llm: &ExtractiveMock,
            extractor: &extractor,
            oracle: &oracle,
        };
        let mut cfg = LoopConfig {
            k,
            max_iter,
            seed,
            ..Default::default()
        };
        if baseline {
            cfg = cfg.baseline();
        }
        let trace = match feedback_loop(&Query::new(source, target, t), &path, &env, &clients, &cfg) {
            Ok((_, trace)) => trace,
            Err(f) => return Err(PyValueError::new_err(f.error.to_string())),
        };
        serde_json::to_string(&trace).map_err(value_err)
    }
}

fn serde_kind(k: hgcr_core::pathgen::NegativeKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

type Rows = Vec<Vec<f64>>;
type Group = ((Rows, Rows), Vec<(Rows, Rows)>);

fn sample_input(contexts: Rows, nodes: Rows) -> PyResult<SampleInput> {
    let rows = |m: Rows| -> PyResult<Vec<Vector>> { m.into_iter().map(|r| Vector::new(r).map_err(value_err)).collect() };
    SampleInput::from_vectors(&rows(contexts)?, &rows(nodes)?).map_err(value_err)
}

/// Context-path ranker: self-attention over contexts, cross-attention to path nodes.
#[pyclass(name = "Ranker")]
struct PyRanker(RankerParams);

#[pymethods]
impl PyRanker {
    #[new]
    #[pyo3(signature = (d_model, heads, d_n, d_p, seed = 0, margin = 0.3, lr = 0.05))]
    fn new(d_model: usize, heads: usize, d_n: usize, d_p: usize, seed: u64, margin: f64, lr: f64) -> PyResult<Self> {
        let config = RankerConfig {
            d_model,
            heads,
            d_n,
            d_p,
            margin,
            lr,
            epochs: 1,
            seed,
        };
        RankerParams::init(config).map(PyRanker).map_err(value_err)
    }

    /// Plausibility in (0, 1) for `m × d_p` contexts and `k × d_n` path nodes.
    fn score(&self, contexts: Rows, nodes: Rows) -> PyResult<f64> {
        forward(&self.0, &sample_input(contexts, nodes)?).map_err(value_err)
    }

    /// Retrains from the current config on `(positive, [negatives])` groups,
    /// each sample a `(contexts, nodes)` pair. Returns per-epoch mean loss.
    fn fit(&mut self, groups: Vec<Group>, epochs: usize) -> PyResult<Vec<f64>> {
        let groups = groups
            .into_iter()
            .map(|((pc, pn), negs)| {
                Ok(TrainingGroup {
                    positive: sample_input(pc, pn)?,
                    negatives: negs
                        .into_iter()
                        .map(|(c, n)| sample_input(c, n))
                        .collect::<PyResult<_>>()?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let config = RankerConfig {
            epochs,
            ..self.0.config
        };
        let (params, log) = train(config, &groups).map_err(value_err)?;
        self.0 = params;
        Ok(log.epoch_loss)
    }

    fn to_checkpoint(&self) -> String {
        self.0.to_checkpoint()
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        RankerParams::read_checkpoint(text.as_bytes()).map(PyRanker).map_err(value_err)
    }
}

fn pairs(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Vec<(f64, bool)>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(scores.into_iter().zip(labels).collect())
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    auc(&pairs(scores, labels)?).map_err(value_err)
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    ap(&pairs(scores, labels)?).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (s_pos, s_negs, margin = 0.3))]
fn margin_loss(s_pos: f64, s_negs: Vec<f64>, margin: f64) -> PyResult<f64> {
    hgcr_core::ranker::margin_loss(s_pos, &s_negs, margin).map_err(value_err)
}

/// Micro/macro AUC and AP over `(query_id, scores, labels)` triples, as JSON.
#[pyfunction]
fn metrics_report(results: Vec<(String, Vec<f64>, Vec<bool>)>) -> PyResult<String> {
    let rs = results
        .into_iter()
        .map(|(id, s, l)| Ok(QueryResult::new(id, pairs(s, l)?)))
        .collect::<PyResult<Vec<_>>>()?;
    serde_json::to_string(&MetricsReport::compute(&rs)).map_err(value_err)
}

/// Runs the `hgcr` command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    hgcr_core::cli::main_with_args(std::iter::once("hgcr".to_string()).chain(args))
}

#[pymodule]
fn hgcr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyRanker>()?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(margin_loss, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}

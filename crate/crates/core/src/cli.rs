//! Command-line front end: configuration, file plumbing and the experiment commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbeddingSource, EmbeddingTable, TableKind};
use crate::expl::metrics::{explanation_metrics, ExplanationMetrics};
use crate::expl::{
    convergence_report, run_traces, Clients, ComparisonPool, ConceptMeanEncoder, ExplainEnv, ExtractiveMock,
    FeedbackTrace, FixtureOracle, HttpClient, KnownRelations, LanguageModel, Lexicon, LoopConfig, LoopMode,
    RetryPolicy, ScriptedMock, Template, ValidationConfig, VerbListExtractor,
};
use crate::ireval::MetricsReport;
use crate::kgraph::TemporalGraph;
use crate::pathgen::{
    build_dataset, discover_queries, future_reference, read_samples, write_samples, DatasetMode, DatasetOptions,
    LabeledPathSample, NegativeCaps, Path, Query,
};
use crate::pipeline::{encode_all, least_squares_slope, query_results, score_all, score_vs_sim, training_groups};
use crate::ranker::{train, DocVectors, RankerConfig, RankerParams};
use crate::seed;

/// Context sizes swept by `ablate-k`.
pub const K_GRID: [usize; 6] = [1, 3, 5, 7, 9, 11];

pub const ENDPOINT_VAR: &str = "HGCR_LLM_ENDPOINT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
}

/// Classifies a command failure into an exit code and a JSON error record.
pub fn error_record(err: &anyhow::Error) -> (i32, String) {
    let kind = err
        .chain()
        .find_map(|e| {
            if let Some(c) = e.downcast_ref::<CliError>() {
                return Some(match c {
                    CliError::MissingFile(_) => ("missing_file", 2),
                    CliError::Config(_) => ("config", 3),
                    CliError::Input(_) => ("input", 3),
                });
            }
            e.downcast_ref::<std::io::Error>()
                .filter(|io| io.kind() == std::io::ErrorKind::NotFound)
                .map(|_| ("missing_file", 2))
        })
        .unwrap_or(("runtime", 1));
    let message = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    let record = serde_json::json!({ "error": kind.0, "message": message });
    (kind.1, record.to_string())
}

/// Flat `key=value` run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    pub timing: Option<PathBuf>,
    pub concept_embeddings: Option<PathBuf>,
    pub doc_embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub oracle_pairs: Option<PathBuf>,
    pub llm_script: Option<PathBuf>,
    pub llm_timeout_ms: u64,
    pub split_year: Option<i32>,
    pub dataset_mode: DatasetMode,
    pub caps: NegativeCaps,
    pub embed_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub k: usize,
    pub max_iter: usize,
    pub mode: LoopMode,
    pub template: Option<Template>,
    pub n_comparison: usize,
    pub top_frac: f64,
    pub parallelism: usize,
    pub per_class: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("."),
            corpus: None,
            graph: None,
            dataset: None,
            checkpoint: None,
            traces: None,
            timing: None,
            concept_embeddings: None,
            doc_embeddings: None,
            lexicon: None,
            oracle_pairs: None,
            llm_script: None,
            llm_timeout_ms: 60_000,
            split_year: None,
            dataset_mode: DatasetMode::Train,
            caps: NegativeCaps::default(),
            embed_dim: 32,
            d_model: 32,
            heads: 2,
            margin: 0.3,
            lr: 0.05,
            epochs: 200,
            k: 7,
            max_iter: 5,
            mode: LoopMode::Feedback,
            template: None,
            n_comparison: 100,
            top_frac: 0.10,
            parallelism: 4,
            per_class: 3,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| CliError::Config(format!("{key}: {e}")))
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(key: &str, v: T) -> Result<T, CliError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{key} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let path = || Some(PathBuf::from(v));
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "corpus" => self.corpus = path(),
            "graph" => self.graph = path(),
            "dataset" => self.dataset = path(),
            "checkpoint" => self.checkpoint = path(),
            "traces" => self.traces = path(),
            "timing" => self.timing = path(),
            "concept_embeddings" => self.concept_embeddings = path(),
            "doc_embeddings" => self.doc_embeddings = path(),
            "lexicon" => self.lexicon = path(),
            "oracle_pairs" => self.oracle_pairs = path(),
            "llm_script" => self.llm_script = path(),
            "llm_timeout_ms" => self.llm_timeout_ms = positive(key, parse(key, v)?)?,
            "split_year" => self.split_year = Some(parse(key, v)?),
            "dataset_mode" => {
                self.dataset_mode = match v {
                    "train" => DatasetMode::Train,
                    "test" => DatasetMode::Test,
                    other => return Err(CliError::Config(format!("dataset_mode: unknown value '{other}'"))),
                }
            }
            "neg_len3" => self.caps.neg_len3 = parse(key, v)?,
            "neg_len4" => self.caps.neg_len4 = parse(key, v)?,
            "embed_dim" => self.embed_dim = positive(key, parse(key, v)?)?,
            "d_model" => self.d_model = positive(key, parse(key, v)?)?,
            "heads" => self.heads = positive(key, parse(key, v)?)?,
            "margin" | "delta" => self.margin = positive(key, parse(key, v)?)?,
            "lr" => self.lr = positive(key, parse(key, v)?)?,
            "epochs" => self.epochs = parse(key, v)?,
            "k" => self.k = positive(key, parse(key, v)?)?,
            "max_iter" => self.max_iter = positive(key, parse(key, v)?)?,
            "mode" => self.mode = parse(key, v)?,
            "template" => self.template = Some(parse(key, v)?),
            "n_comparison" => self.n_comparison = positive(key, parse(key, v)?)?,
            "top_frac" => self.top_frac = positive(key, parse(key, v)?)?,
            "parallelism" => self.parallelism = positive(key, parse(key, v)?)?,
            "per_class" => self.per_class = positive(key, parse(key, v)?)?,
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are ignored.
    pub fn parse_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = read_text(path)?;
        Ok(Self::parse_text(&text)?)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Explicit setting, else the conventional file in the output directory.
    fn input(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out(default_name))
    }

    fn template(&self) -> Template {
        self.template.unwrap_or(match self.mode {
            LoopMode::Baseline => Template::Baseline,
            LoopMode::Feedback => Template::Short,
        })
    }

    fn loop_config(&self, k: usize) -> LoopConfig {
        LoopConfig {
            k,
            max_iter: self.max_iter,
            mode: self.mode,
            template: self.template(),
            retry: RetryPolicy::default(),
            validation: ValidationConfig {
                n_comparison: self.n_comparison,
                top_frac: self.top_frac,
            },
            seed: seed::derive(self.seed, "validation-pairs", 0),
            ..Default::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hgcr", version, about = "Temporal co-occurrence graph, path ranking and explanation pipeline")]
pub struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Overrides a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Inputs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub split_year: Option<i32>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub mode: Option<LoopMode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a JSON-lines corpus into a graph file.
    BuildGraph(Inputs),
    /// Discover queries after the split year and sample labeled paths.
    MakeDataset(Inputs),
    /// Train the ranker on a dataset.
    Train(Inputs),
    /// Micro/macro ROC AUC and AP of a checkpoint on a dataset.
    EvalRanker(Inputs),
    /// Generate explanation traces (baseline or feedback mode).
    Explain(Inputs),
    /// Jaccard, similarity and error rate per trace.
    EvalExpl(Inputs),
    /// Explanation metrics over the context-size grid.
    AblateK(Inputs),
    /// Ranker score against explanation similarity.
    ScoreVsSim(Inputs),
    /// Convergence histogram and token/latency summary.
    Report(Inputs),
}

impl Cli {
    /// Config file, then `--set` overrides, then global flags, then command flags.
    pub fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        let inputs = match &self.command {
            Command::BuildGraph(i)
            | Command::MakeDataset(i)
            | Command::Train(i)
            | Command::EvalRanker(i)
            | Command::Explain(i)
            | Command::EvalExpl(i)
            | Command::AblateK(i)
            | Command::ScoreVsSim(i)
            | Command::Report(i) => i,
        };
        macro_rules! take {
            ($field:ident) => {
                if inputs.$field.is_some() {
                    cfg.$field = inputs.$field.clone();
                }
            };
        }
        take!(corpus);
        take!(graph);
        take!(dataset);
        take!(checkpoint);
        take!(traces);
        take!(split_year);
        if let Some(k) = inputs.k {
            cfg.k = positive("k", k)?;
        }
        if let Some(m) = inputs.mode {
            cfg.mode = m;
        }
        Ok(cfg)
    }
}

/// Parses configuration and dispatches the command. Returns the lines printed to stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = cli.config()?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    match cli.command {
        Command::BuildGraph(_) => cmd_build_graph(&cfg).map(|s| serde_json::to_string(&s).expect("stats serialize")),
        Command::MakeDataset(_) => cmd_make_dataset(&cfg).map(|s| serde_json::to_string(&s).expect("summary serialize")),
        Command::Train(_) => cmd_train(&cfg).map(|s| serde_json::to_string(&s).expect("summary serialize")),
        Command::EvalRanker(_) => cmd_eval_ranker(&cfg).map(|r| r.to_text()),
        Command::Explain(_) => cmd_explain(&cfg).map(|s| serde_json::to_string(&s).expect("summary serialize")),
        Command::EvalExpl(_) => cmd_eval_expl(&cfg).map(|rows| expl_table(&rows)),
        Command::AblateK(_) => cmd_ablate_k(&cfg).map(|rows| ablation_table(&rows)),
        Command::ScoreVsSim(_) => {
            cmd_score_vs_sim(&cfg).map(|s| serde_json::to_string(&s.summary).expect("summary serialize"))
        }
        Command::Report(_) => cmd_report(&cfg).map(|r| r.text),
    }
}

fn require(path: &FsPath) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.to_path_buf()).into())
    }
}

fn read_text(path: &FsPath) -> Result<String> {
    require(path)?;
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn open(path: &FsPath) -> Result<BufReader<File>> {
    require(path)?;
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn write_jsonl<T: Serialize>(path: &FsPath, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &FsPath) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn write_text(path: &FsPath, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_graph(cfg: &RunConfig) -> Result<TemporalGraph> {
    let path = cfg.input(&cfg.graph, "graph.jsonl");
    let mut g = TemporalGraph::read_corpus(open(&path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    g.freeze();
    Ok(g)
}

fn load_concepts(cfg: &RunConfig) -> Result<EmbeddingSource> {
    match &cfg.concept_embeddings {
        Some(p) => {
            require(p)?;
            Ok(EmbeddingSource::Table(
                EmbeddingTable::load(p, TableKind::Concept).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
            ))
        }
        None => Ok(EmbeddingSource::Synthetic {
            dim: cfg.embed_dim,
            seed: seed::derive(cfg.seed, "embed", 0),
        }),
    }
}

fn load_doc_table(cfg: &RunConfig) -> Result<Option<EmbeddingTable>> {
    cfg.doc_embeddings
        .as_ref()
        .map(|p| {
            require(p)?;
            EmbeddingTable::load(p, TableKind::Context)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())).into())
        })
        .transpose()
}

fn doc_vectors(cfg: &RunConfig, concepts: &EmbeddingSource) -> Result<DocVectors> {
    Ok(match load_doc_table(cfg)? {
        Some(t) => DocVectors::Table(t),
        None => DocVectors::ConceptMean(concepts.clone()),
    })
}

fn ranker_config(cfg: &RunConfig, concepts: &EmbeddingSource, docs: &DocVectors) -> RankerConfig {
    RankerConfig {
        d_model: cfg.d_model,
        heads: cfg.heads,
        d_n: concepts.dim(),
        d_p: docs.dim(),
        margin: cfg.margin,
        lr: cfg.lr,
        epochs: cfg.epochs,
        seed: seed::derive(cfg.seed, "init", 0),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Vec<LabeledPathSample>> {
    let path = cfg.input(&cfg.dataset, "dataset.jsonl");
    read_samples(open(&path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())).into())
}

fn load_checkpoint(path: &FsPath) -> Result<RankerParams> {
    RankerParams::read_checkpoint(open(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())).into())
}

fn optional_checkpoint(cfg: &RunConfig) -> Result<Option<RankerParams>> {
    cfg.checkpoint.as_deref().map(load_checkpoint).transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub docs: usize,
    pub year_min: Option<i32>,
    pub year_max: Option<i32>,
    pub warnings: Vec<String>,
}

pub fn cmd_build_graph(cfg: &RunConfig) -> Result<GraphStats> {
    let corpus = cfg
        .corpus
        .clone()
        .ok_or_else(|| CliError::Config("corpus is not set".into()))?;
    let mut g = TemporalGraph::read_corpus(open(&corpus)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", corpus.display())))?;
    g.freeze();
    let mut warnings = Vec::new();
    if g.doc_count() == 0 {
        log::warn!("corpus {} is empty", corpus.display());
        warnings.push("empty corpus".to_string());
    }
    let out = cfg.out("graph.jsonl");
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    g.write_corpus(&mut w)?;
    w.flush()?;
    let bounds = g.year_bounds();
    let stats = GraphStats {
        nodes: g.node_count(),
        edges: g.edge_count(),
        docs: g.doc_count(),
        year_min: bounds.map(|b| b.0),
        year_max: bounds.map(|b| b.1),
        warnings,
    };
    write_text(&cfg.out("graph_stats.json"), &serde_json::to_string_pretty(&stats)?)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub queries: usize,
    pub samples: usize,
    pub positives: usize,
    pub failed_queries: usize,
}

/// Pairs first connected at or after `split_year` whose endpoints were both
/// already present the year before.
pub fn split_queries(g: &TemporalGraph, split_year: i32) -> Vec<Query> {
    let Ok(view) = g.snapshot(split_year - 1) else {
        return Vec::new();
    };
    discover_queries(g, split_year, None)
        .into_iter()
        .filter(|q| view.contains_node(&q.source) && view.contains_node(&q.target))
        .collect()
}

pub fn cmd_make_dataset(cfg: &RunConfig) -> Result<DatasetSummary> {
    let g = load_graph(cfg)?;
    let split = cfg
        .split_year
        .ok_or_else(|| CliError::Config("split_year is not set".into()))?;
    let queries = split_queries(&g, split);
    let opts = DatasetOptions {
        caps: cfg.caps,
        mode: cfg.dataset_mode,
        seed: seed::derive(cfg.seed, "dataset", 0),
        sampling_cutoff: Some(split - 1),
        ..Default::default()
    };
    let ds = build_dataset(&g, &queries, &opts);
    let out = cfg.out("dataset.jsonl");
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    write_samples(&ds.samples, &mut w)?;
    w.flush()?;
    write_jsonl(&cfg.out("dataset_report.jsonl"), &ds.reports)?;
    Ok(DatasetSummary {
        queries: queries.len(),
        samples: ds.samples.len(),
        positives: ds.samples.iter().filter(|s| s.is_positive()).count(),
        failed_queries: ds.reports.iter().filter(|r| r.error.is_some()).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub groups: usize,
    pub epochs: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    loss: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let g = load_graph(cfg)?;
    let samples = load_dataset(cfg)?;
    let concepts = load_concepts(cfg)?;
    let docs = doc_vectors(cfg, &concepts)?;
    let inputs = encode_all(&samples, &g, &concepts, &docs)?;
    let groups = training_groups(&samples, &inputs);
    if groups.is_empty() {
        bail!(CliError::Input("dataset has no positive with negatives to train on".into()));
    }
    let (params, log) = train(ranker_config(cfg, &concepts, &docs), &groups)?;
    let path = cfg.out("checkpoint.txt");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    params.write_checkpoint(&mut w)?;
    w.flush()?;
    let lines: Vec<EpochLine> = log
        .epoch_loss
        .iter()
        .enumerate()
        .map(|(i, &loss)| EpochLine { epoch: i + 1, loss })
        .collect();
    write_jsonl(&cfg.out("train_log.jsonl"), &lines)?;
    Ok(TrainSummary {
        groups: groups.len(),
        epochs: log.epoch_loss.len(),
        first_loss: log.epoch_loss.first().copied(),
        final_loss: log.epoch_loss.last().copied(),
    })
}

pub fn cmd_eval_ranker(cfg: &RunConfig) -> Result<MetricsReport> {
    let g = load_graph(cfg)?;
    let samples = load_dataset(cfg)?;
    let params = load_checkpoint(&cfg.input(&cfg.checkpoint, "checkpoint.txt"))?;
    let concepts = load_concepts(cfg)?;
    let docs = doc_vectors(cfg, &concepts)?;
    let inputs = encode_all(&samples, &g, &concepts, &docs)?;
    let scores = score_all(&params, &inputs)?;
    let report = MetricsReport::compute(&query_results(&samples, &scores));
    write_text(&cfg.out("ranker_metrics.json"), &serde_json::to_string_pretty(&report)?)?;
    write_text(&cfg.out("ranker_metrics.txt"), &report.to_text())?;
    Ok(report)
}

fn load_lexicon(cfg: &RunConfig, g: &TemporalGraph) -> Result<Lexicon> {
    let mut lex = Lexicon::identity(g.nodes());
    if let Some(p) = &cfg.lexicon {
        for (i, line) in read_text(p)?.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, concept) = line
                .split_once('\t')
                .ok_or_else(|| CliError::Input(format!("{} line {}: expected surface<TAB>concept", p.display(), i + 1)))?;
            lex.insert(surface, concept.trim().into());
        }
    }
    Ok(lex)
}

fn load_oracle(cfg: &RunConfig) -> Result<FixtureOracle> {
    let mut oracle = FixtureOracle::new(seed::derive(cfg.seed, "oracle", 0));
    if let Some(p) = &cfg.oracle_pairs {
        for (i, line) in read_text(p)?.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => {}
                [c, ..] if c.starts_with('#') => {}
                ["plausible", a, b] => oracle = oracle.plausible(*a, *b),
                ["implausible", a, b] => oracle = oracle.implausible(*a, *b),
                _ => bail!(CliError::Input(format!(
                    "{} line {}: expected 'plausible|implausible <a> <b>'",
                    p.display(),
                    i + 1
                ))),
            }
        }
    }
    Ok(oracle)
}

fn load_llm(cfg: &RunConfig) -> Result<Box<dyn LanguageModel>> {
    if let Ok(endpoint) = std::env::var(ENDPOINT_VAR) {
        if !endpoint.trim().is_empty() {
            return Ok(Box::new(HttpClient::new(endpoint, Duration::from_millis(cfg.llm_timeout_ms))));
        }
    }
    match &cfg.llm_script {
        Some(p) => Ok(Box::new(
            ScriptedMock::read(open(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        )),
        None => Ok(Box::new(ExtractiveMock)),
    }
}

/// Everything `explain` and `ablate-k` share.
struct ExplainSetup {
    g: TemporalGraph,
    lexicon: Lexicon,
    encoder: ConceptMeanEncoder,
    llm: Box<dyn LanguageModel>,
    oracle: FixtureOracle,
    extractor: VerbListExtractor,
    jobs: Vec<(Query, Path)>,
}

/// One path per query: the top-scored candidate when a checkpoint is
/// configured, else the query's first positive sample.
fn choose_paths(cfg: &RunConfig, g: &TemporalGraph, samples: &[LabeledPathSample]) -> Result<Vec<(Query, Path)>> {
    let mut by_query: BTreeMap<&Query, Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        by_query
            .entry(&s.query)
            .or_insert_with(|| {
                order.push(&s.query);
                Vec::new()
            })
            .push(i);
    }
    let scores = match optional_checkpoint(cfg)? {
        Some(params) => {
            let concepts = load_concepts(cfg)?;
            let docs = doc_vectors(cfg, &concepts)?;
            Some(score_all(&params, &encode_all(samples, g, &concepts, &docs)?)?)
        }
        None => None,
    };
    let mut jobs = Vec::new();
    for q in order {
        let idx = &by_query[q];
        let pick = match &scores {
            Some(sc) => idx.iter().copied().max_by(|&a, &b| {
                sc[a]
                    .total_cmp(&sc[b])
                    .then_with(|| samples[b].path.nodes.cmp(&samples[a].path.nodes))
            }),
            None => idx.iter().copied().find(|&i| samples[i].is_positive()),
        };
        if let Some(i) = pick {
            jobs.push((q.clone(), samples[i].path.clone()));
        }
    }
    Ok(jobs)
}

fn explain_setup(cfg: &RunConfig) -> Result<ExplainSetup> {
    let g = load_graph(cfg)?;
    let samples = load_dataset(cfg)?;
    let jobs = choose_paths(cfg, &g, &samples)?;
    let lexicon = load_lexicon(cfg, &g)?;
    let concepts = load_concepts(cfg)?;
    let mut encoder = ConceptMeanEncoder::new("concept_mean", lexicon.clone(), concepts);
    if let Some(t) = load_doc_table(cfg)? {
        encoder = encoder.with_doc_table(t);
    }
    Ok(ExplainSetup {
        llm: load_llm(cfg)?,
        oracle: load_oracle(cfg)?,
        extractor: VerbListExtractor::default(),
        g,
        lexicon,
        encoder,
        jobs,
    })
}

/// A trace line: the trace itself, plus the error when the loop failed part way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(flatten)]
    pub trace: FeedbackTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub query: Query,
    pub iteration: usize,
    pub attempts: u32,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

fn run_jobs(setup: &ExplainSetup, cfg: &RunConfig, loop_cfg: &LoopConfig) -> Vec<TraceRecord> {
    let clients = Clients {
        llm: setup.llm.as_ref(),
        extractor: &setup.extractor,
        oracle: &setup.oracle,
    };
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, (q, _)) in setup.jobs.iter().enumerate() {
        by_year.entry(q.t).or_default().push(i);
    }
    let mut out: Vec<Option<TraceRecord>> = vec![None; setup.jobs.len()];
    for (t, idx) in by_year {
        let (known, pool) = match setup.g.snapshot(t - 1) {
            Ok(v) => (KnownRelations::from_view(&v), ComparisonPool::from_view(&v)),
            Err(_) => (KnownRelations::new(), ComparisonPool::default()),
        };
        let env = ExplainEnv {
            graph: &setup.g,
            encoder: &setup.encoder,
            lexicon: &setup.lexicon,
            known: &known,
            pool: &pool,
        };
        let jobs: Vec<(Query, Path)> = idx.iter().map(|&i| setup.jobs[i].clone()).collect();
        for (i, r) in idx.into_iter().zip(run_traces(&jobs, &env, &clients, loop_cfg, cfg.parallelism)) {
            out[i] = Some(match r {
                Ok((_, trace)) => TraceRecord { trace, error: None },
                Err(f) => TraceRecord {
                    error: Some(f.error.to_string()),
                    trace: *f.trace,
                },
            });
        }
    }
    out.into_iter().map(|r| r.expect("every job ran")).collect()
}

fn timing_records(traces: &[TraceRecord]) -> Vec<TimingRecord> {
    traces
        .iter()
        .flat_map(|t| {
            t.trace.iterations.iter().map(|it| TimingRecord {
                query: t.trace.query.clone(),
                iteration: it.iteration,
                attempts: it.attempts,
                latency_ms: it.latency_ms,
                prompt_tokens: it.prompt_tokens,
                completion_tokens: it.completion_tokens,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainSummary {
    pub traces: usize,
    pub converged: usize,
    pub failed: usize,
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<ExplainSummary> {
    let setup = explain_setup(cfg)?;
    let traces = run_jobs(&setup, cfg, &cfg.loop_config(cfg.k));
    write_jsonl(&cfg.out("traces.jsonl"), &traces)?;
    write_jsonl(&cfg.out("timing.jsonl"), &timing_records(&traces))?;
    Ok(ExplainSummary {
        traces: traces.len(),
        converged: traces.iter().filter(|t| t.trace.converged).count(),
        failed: traces.iter().filter(|t| t.error.is_some()).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplRow {
    pub query: Query,
    pub mode: LoopMode,
    pub iterations_used: usize,
    pub converged: bool,
    #[serde(flatten)]
    pub metrics: ExplanationMetrics,
}

fn expl_rows(g: &TemporalGraph, lexicon: &Lexicon, encoder: &ConceptMeanEncoder, traces: &[TraceRecord]) -> Vec<ExplRow> {
    traces
        .iter()
        .filter_map(|t| {
            let last = t.trace.iterations.last()?;
            let refs: Vec<_> = future_reference(g, &t.trace.query)
                .map(|fr| fr.abstracts.into_iter().collect())
                .unwrap_or_default();
            Some(ExplRow {
                query: t.trace.query.clone(),
                mode: t.trace.mode,
                iterations_used: t.trace.iterations_used,
                converged: t.trace.converged,
                metrics: explanation_metrics(&last.explanation, &refs, g, lexicon, &[encoder], &last.verdicts),
            })
        })
        .collect()
}

pub fn cmd_eval_expl(cfg: &RunConfig) -> Result<Vec<ExplRow>> {
    let g = load_graph(cfg)?;
    let lexicon = load_lexicon(cfg, &g)?;
    let mut encoder = ConceptMeanEncoder::new("concept_mean", lexicon.clone(), load_concepts(cfg)?);
    if let Some(t) = load_doc_table(cfg)? {
        encoder = encoder.with_doc_table(t);
    }
    let traces: Vec<TraceRecord> = read_jsonl(&cfg.input(&cfg.traces, "traces.jsonl"))?;
    let rows = expl_rows(&g, &lexicon, &encoder, &traces);
    write_jsonl(&cfg.out("expl_metrics.jsonl"), &rows)?;
    write_text(&cfg.out("expl_metrics.txt"), &expl_table(&rows))?;
    Ok(rows)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn expl_table(rows: &[ExplRow]) -> String {
    let mut s = String::from("query\tmode\titerations\tconverged\tjaccard\tsim\terror_rate\n");
    for r in rows {
        let sim = mean(r.metrics.sims.values().copied());
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            r.query, r.mode, r.iterations_used, r.converged, r.metrics.jaccard, sim, r.metrics.error_rate
        );
    }
    let _ = writeln!(
        s,
        "mean\t-\t{:.2}\t{}\t{:.4}\t{:.4}\t{:.4}",
        mean(rows.iter().map(|r| r.iterations_used as f64)),
        rows.iter().filter(|r| r.converged).count(),
        mean(rows.iter().map(|r| r.metrics.jaccard)),
        mean(rows.iter().map(|r| mean(r.metrics.sims.values().copied()))),
        mean(rows.iter().map(|r| r.metrics.error_rate)),
    );
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    pub traces: usize,
    pub converged: usize,
    pub mean_iterations: f64,
    pub jaccard: f64,
    pub sim: f64,
    pub error_rate: f64,
}

pub fn cmd_ablate_k(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let setup = explain_setup(cfg)?;
    let mut rows = Vec::new();
    for k in K_GRID {
        let traces = run_jobs(&setup, cfg, &cfg.loop_config(k));
        let er = expl_rows(&setup.g, &setup.lexicon, &setup.encoder, &traces);
        rows.push(AblationRow {
            k,
            traces: traces.len(),
            converged: traces.iter().filter(|t| t.trace.converged).count(),
            mean_iterations: mean(traces.iter().map(|t| t.trace.iterations_used as f64)),
            jaccard: mean(er.iter().map(|r| r.metrics.jaccard)),
            sim: mean(er.iter().map(|r| mean(r.metrics.sims.values().copied()))),
            error_rate: mean(er.iter().map(|r| r.metrics.error_rate)),
        });
    }
    write_jsonl(&cfg.out("ablation_k.jsonl"), &rows)?;
    write_text(&cfg.out("ablation_k.tsv"), &ablation_table(&rows))?;
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("k\ttraces\tconverged\tmean_iterations\tjaccard\tsim\terror_rate\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.2}\t{:.4}\t{:.4}\t{:.4}",
            r.k, r.traces, r.converged, r.mean_iterations, r.jaccard, r.sim, r.error_rate
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSummary {
    pub points: usize,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOutput {
    pub points: Vec<crate::pipeline::ScatterPoint>,
    pub summary: ScatterSummary,
}

pub fn cmd_score_vs_sim(cfg: &RunConfig) -> Result<ScatterOutput> {
    let g = load_graph(cfg)?;
    let samples = load_dataset(cfg)?;
    let params = load_checkpoint(&cfg.input(&cfg.checkpoint, "checkpoint.txt"))?;
    let concepts = load_concepts(cfg)?;
    let docs = doc_vectors(cfg, &concepts)?;
    let inputs = encode_all(&samples, &g, &concepts, &docs)?;
    let lexicon = load_lexicon(cfg, &g)?;
    let mut encoder = ConceptMeanEncoder::new("concept_mean", lexicon.clone(), concepts);
    if let DocVectors::Table(t) = docs {
        encoder = encoder.with_doc_table(t);
    }
    let points = score_vs_sim(
        &params,
        &samples,
        &inputs,
        &g,
        &encoder,
        &lexicon,
        cfg.per_class,
        seed::derive(cfg.seed, "score_vs_sim", 0),
    )?;
    let summary = ScatterSummary {
        points: points.len(),
        slope: least_squares_slope(&points.iter().map(|p| (p.score, p.sim)).collect::<Vec<_>>()),
    };
    write_jsonl(&cfg.out("score_vs_sim.jsonl"), &points)?;
    write_text(&cfg.out("score_vs_sim_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(ScatterOutput { points, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub calls: usize,
    pub mean_prompt_tokens: f64,
    pub mean_completion_tokens: f64,
    pub mean_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub convergence: crate::expl::ConvergenceReport,
    pub cost: CostSummary,
    #[serde(skip)]
    pub text: String,
}

/// Builds the convergence histogram and cost summary from trace records and
/// optional timing records.
pub fn build_report(traces: &[TraceRecord], timing: Option<&[TimingRecord]>, max_iter: usize) -> Report {
    let plain: Vec<FeedbackTrace> = traces.iter().map(|t| t.trace.clone()).collect();
    let convergence = convergence_report(&plain, max_iter);
    let its: Vec<_> = plain.iter().flat_map(|t| t.iterations.iter()).collect();
    let cost = CostSummary {
        calls: its.len(),
        mean_prompt_tokens: mean(its.iter().map(|i| i.prompt_tokens as f64)),
        mean_completion_tokens: mean(its.iter().map(|i| i.completion_tokens as f64)),
        mean_latency_ms: timing
            .filter(|t| !t.is_empty())
            .map(|t| mean(t.iter().map(|r| r.latency_ms as f64))),
    };
    let mut text = convergence.to_text();
    let _ = writeln!(text, "traces\t{}", convergence.total());
    let _ = writeln!(
        text,
        "calls {}  mean prompt tokens {:.1}  mean completion tokens {:.1}  mean latency ms {}",
        cost.calls,
        cost.mean_prompt_tokens,
        cost.mean_completion_tokens,
        cost.mean_latency_ms.map_or("n/a".into(), |l| format!("{l:.1}"))
    );
    Report {
        convergence,
        cost,
        text,
    }
}

pub fn cmd_report(cfg: &RunConfig) -> Result<Report> {
    let traces: Vec<TraceRecord> = read_jsonl(&cfg.input(&cfg.traces, "traces.jsonl"))?;
    let timing_path = cfg.input(&cfg.timing, "timing.jsonl");
    let timing: Option<Vec<TimingRecord>> = if timing_path.is_file() {
        Some(read_jsonl(&timing_path)?)
    } else {
        None
    };
    let max_iter = traces
        .iter()
        .map(|t| t.trace.max_iter)
        .max()
        .unwrap_or(cfg.max_iter)
        .max(cfg.max_iter);
    let report = build_report(&traces, timing.as_deref(), max_iter);
    write_text(&cfg.out("report.txt"), &report.text)?;
    write_text(&cfg.out("report.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Runs the binary's argument vector; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{}", out.trim_end());
            }
            0
        }
        Err(e) => {
            let (code, record) = error_record(&e);
            eprintln!("{record}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_flat_pairs() {
        let cfg = RunConfig::parse_text("# comment\nseed = 9\nk=3\nmode=baseline\nsplit_year=2022\n\n").unwrap();
        assert_eq!((cfg.seed, cfg.k, cfg.mode, cfg.split_year), (9, 3, LoopMode::Baseline, Some(2022)));
        assert_eq!(cfg.template(), Template::Baseline);
        assert_eq!(cfg.margin, 0.3);
        assert_eq!((cfg.caps.neg_len3, cfg.caps.neg_len4), (100, 100));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(RunConfig::parse_text("k=0").is_err());
        assert!(RunConfig::parse_text("nonsense=1").is_err());
        assert!(RunConfig::parse_text("just a line").is_err());
        assert!(RunConfig::parse_text("lr=-1").is_err());
    }

    #[test]
    fn missing_file_maps_to_exit_two() {
        let e: anyhow::Error = CliError::MissingFile("x".into()).into();
        let (code, rec) = error_record(&e.context("loading"));
        assert_eq!(code, 2);
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        assert_eq!(v["error"], "missing_file");
    }
}

//! The generate → extract → validate → refine loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{generate, LanguageModel, RetryPolicy, SamplingParams};
use super::context::{refine_context, select_edge_contexts, ContextSet, Replacement};
use super::metrics::error_rate;
use super::prompt::{build_prompt, ContextDoc, Template};
use super::text::{Lexicon, TextEncoder};
use super::validate::{
    flag_rework, validate, ComparisonPool, KnownRelations, PlausibilityOracle, Predicate, PredicateExtractor,
    ValidationConfig, Verdict, VerdictStatus,
};
use super::{Explanation, ExplError};
use crate::kgraph::{ConceptId, DocId, TemporalGraph};
use crate::pathgen::{Path, Query};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    Baseline,
    #[default]
    Feedback,
}

impl std::str::FromStr for LoopMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(LoopMode::Baseline),
            "feedback" => Ok(LoopMode::Feedback),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

impl std::fmt::Display for LoopMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LoopMode::Baseline => "baseline",
            LoopMode::Feedback => "feedback",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub k: usize,
    pub max_iter: usize,
    pub mode: LoopMode,
    pub template: Template,
    pub sampling: SamplingParams,
    pub retry: RetryPolicy,
    pub validation: ValidationConfig,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            k: 7,
            max_iter: 5,
            mode: LoopMode::Feedback,
            template: Template::Short,
            sampling: SamplingParams::default(),
            retry: RetryPolicy::default(),
            validation: ValidationConfig::default(),
            seed: 0,
        }
    }
}

impl LoopConfig {
    /// One pass with the long template and no refinement.
    pub fn baseline(mut self) -> Self {
        self.mode = LoopMode::Baseline;
        self.template = Template::Baseline;
        self
    }
}

/// Shared read-only inputs of every trace.
#[derive(Clone, Copy)]
pub struct ExplainEnv<'a> {
    pub graph: &'a TemporalGraph,
    pub encoder: &'a dyn TextEncoder,
    pub lexicon: &'a Lexicon,
    pub known: &'a KnownRelations,
    pub pool: &'a ComparisonPool,
}

#[derive(Clone, Copy)]
pub struct Clients<'a> {
    pub llm: &'a dyn LanguageModel,
    pub extractor: &'a dyn PredicateExtractor,
    pub oracle: &'a dyn PlausibilityOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prompt: String,
    pub context_doc_ids: Vec<DocId>,
    pub explanation: String,
    pub sentences: Vec<String>,
    pub predicates: Vec<Predicate>,
    pub verdicts: Vec<Verdict>,
    pub rework_sentence_indices: Vec<usize>,
    pub replacements: Vec<Replacement>,
    /// Rework sentences for which no replacement could be made.
    pub unresolved: Vec<usize>,
    pub error_rate: f64,
    pub attempts: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(skip)]
    pub latency_ms: u64,
}

impl IterationRecord {
    pub fn implausible_count(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|v| v.status == VerdictStatus::Implausible)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackTrace {
    pub query: Query,
    pub path_nodes: Vec<ConceptId>,
    pub mode: LoopMode,
    pub max_iter: usize,
    pub short_context: bool,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl FeedbackTrace {
    pub fn final_text(&self) -> Option<&str> {
        self.iterations.last().map(|r| r.explanation.as_str())
    }

    pub fn error_rates(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.error_rate).collect()
    }
}

#[derive(Debug, Error)]
#[error("explanation loop for {}: {error}", trace.query)]
pub struct LoopFailure {
    pub error: ExplError,
    pub trace: Box<FeedbackTrace>,
}

fn context_docs(g: &TemporalGraph, ids: &[DocId]) -> Result<Vec<ContextDoc>, ExplError> {
    ids.iter()
        .map(|id| {
            g.document(id)
                .map(ContextDoc::from_record)
                .ok_or_else(|| ExplError::UnknownDocument(id.clone()))
        })
        .collect()
}

/// Runs the loop for one (query, path) pair. Baseline mode stops after one
/// iteration without touching the context.
pub fn feedback_loop(
    query: &Query,
    path: &Path,
    env: &ExplainEnv<'_>,
    clients: &Clients<'_>,
    cfg: &LoopConfig,
) -> Result<(Explanation, FeedbackTrace), LoopFailure> {
    let max_iter = match cfg.mode {
        LoopMode::Baseline => 1,
        LoopMode::Feedback => cfg.max_iter.max(1),
    };
    let mut trace = FeedbackTrace {
        query: query.clone(),
        path_nodes: path.nodes.clone(),
        mode: cfg.mode,
        max_iter,
        short_context: false,
        iterations: Vec::new(),
        converged: false,
        iterations_used: 0,
    };
    if path.nodes.len() < 2 || path.source() != &query.source || path.target() != &query.target {
        return Err(LoopFailure {
            error: ExplError::EndpointMismatch,
            trace: Box::new(trace),
        });
    }
    let mut ctx: ContextSet = match select_edge_contexts(path, env.graph, env.encoder, cfg.k) {
        Ok(c) => c,
        Err(error) => return Err(LoopFailure { error, trace: Box::new(trace) }),
    };
    trace.short_context = ctx.short;
    let doc_vec = |id: &DocId| env.graph.document(id).and_then(|d| env.encoder.embed_doc(d));
    let label = format!("validation-pairs/{query}");
    let mut last_text = Explanation::new(String::new());
    for iteration in 1..=max_iter {
        let prompt_docs = ctx.selected.clone();
        let step = (|| -> Result<(IterationRecord, Explanation), ExplError> {
            let prompt = build_prompt(&query.source, &query.target, &context_docs(env.graph, &prompt_docs)?, cfg.template);
            let gen = generate(clients.llm, &prompt, &cfg.sampling, &cfg.retry)?;
            let predicates = clients.extractor.extract(&gen.explanation, env.lexicon);
            let verdicts = predicates
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let s = seed::derive(cfg.seed, &label, ((iteration as u64) << 32) | j as u64);
                    validate(clients.oracle, p, env.known, env.pool, &cfg.validation, s)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let rework: Vec<usize> = flag_rework(&verdicts).into_iter().collect();
            let rate = error_rate(&verdicts);
            let record = IterationRecord {
                iteration,
                prompt: prompt.rendered,
                context_doc_ids: prompt_docs.clone(),
                explanation: gen.explanation.text.clone(),
                sentences: gen.explanation.sentences.clone(),
                predicates,
                verdicts,
                rework_sentence_indices: rework,
                replacements: Vec::new(),
                unresolved: Vec::new(),
                error_rate: rate.value,
                attempts: gen.attempts,
                prompt_tokens: gen.prompt_tokens,
                completion_tokens: gen.completion_tokens,
                latency_ms: gen.latency_ms,
            };
            Ok((record, gen.explanation))
        })();
        let (mut record, explanation) = match step {
            Ok(x) => x,
            Err(error) => {
                trace.iterations_used = trace.iterations.len();
                return Err(LoopFailure { error, trace: Box::new(trace) });
            }
        };
        last_text = explanation;
        if record.rework_sentence_indices.is_empty() {
            trace.iterations.push(record);
            trace.converged = true;
            break;
        }
        if iteration < max_iter {
            for &si in &record.rework_sentence_indices {
                let Some(sv) = env.encoder.embed_text(&last_text.sentences[si]) else {
                    record.unresolved.push(si);
                    continue;
                };
                match refine_context(&mut ctx, &prompt_docs, si, &sv, &doc_vec) {
                    Ok(r) => record.replacements.push(r),
                    Err(e) => {
                        log::debug!("{query}: rework sentence {si} left unresolved: {e}");
                        record.unresolved.push(si);
                    }
                }
            }
        }
        trace.iterations.push(record);
    }
    trace.iterations_used = trace.iterations.len();
    Ok((last_text, trace))
}

/// Runs independent traces on at most `parallelism` threads; results keep input order.
pub fn run_traces(
    jobs: &[(Query, Path)],
    env: &ExplainEnv<'_>,
    clients: &Clients<'_>,
    cfg: &LoopConfig,
    parallelism: usize,
) -> Vec<Result<(Explanation, FeedbackTrace), LoopFailure>> {
    let run = || {
        jobs.par_iter()
            .map(|(q, p)| feedback_loop(q, p, env, clients, cfg))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

//! Explanation generation: prompts, language-model clients, predicate
//! validation, the refinement loop and explanation metrics.

pub mod client;
pub mod context;
pub mod feedback;
pub mod metrics;
pub mod prompt;
pub mod text;
pub mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgraph::DocId;

pub use client::{generate, ClientError, ExtractiveMock, GenerateError, HttpClient, LanguageModel, RetryPolicy, SamplingParams, ScriptedMock};
pub use context::{refine_context, select_edge_contexts, ContextSet, Replacement};
pub use feedback::{feedback_loop, run_traces, Clients, ExplainEnv, FeedbackTrace, LoopConfig, LoopFailure, LoopMode};
pub use metrics::{convergence_report, error_rate, jaccard_terms, semantic_sim, ConvergenceReport, ExplanationMetrics};
pub use prompt::{build_prompt, ContextDoc, Prompt, Template};
pub use text::{ConceptMeanEncoder, Lexicon, TextEncoder};
pub use validate::{
    flag_rework, validate, ComparisonPool, FixtureOracle, KnownRelations, PlausibilityOracle, Predicate,
    PredicateExtractor, ValidationConfig, VerbListExtractor, Verdict, VerdictStatus,
};

#[derive(Debug, Error)]
pub enum ExplError {
    #[error("path edge {0} has no context documents")]
    NoContext(usize),
    #[error("no unused candidate left on the edge of document {0}")]
    ExhaustedCandidates(DocId),
    #[error("sentence {0} could not be attributed to a context document")]
    NoAttribution(usize),
    #[error("unknown document {0}")]
    UnknownDocument(DocId),
    #[error("path endpoints do not match the query")]
    EndpointMismatch,
    #[error("oracle failure: {0}")]
    OracleFailure(String),
    #[error(transparent)]
    Generation(#[from] GenerateError),
}

/// Generated text with its sentence split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub sentences: Vec<String>,
}

impl Explanation {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let sentences = text::sentence_spans(&text)
            .into_iter()
            .map(|(s, e)| text[s..e].to_string())
            .collect();
        Explanation { text, sentences }
    }
}

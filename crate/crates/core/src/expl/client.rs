//! Language-model clients: the trait, a retrying `generate`, mocks and an HTTP client.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::{parse_abstracts, Prompt};
use super::Explanation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("empty response")]
    Empty,
    #[error("transport: {0}")]
    Transport(String),
    #[error("no scripted response for prompt {0}")]
    NoScript(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

/// Sampling parameters; the defaults make decoding effectively greedy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            max_tokens: 1000,
            temperature: 1e-19,
            top_p: 1e-9,
        }
    }
}

impl SamplingParams {
    pub fn request(&self, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.to_string(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub latency_ms: u64,
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// A generated explanation plus the bookkeeping needed for cost reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub explanation: Explanation,
    pub attempts: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Failure after all attempts; `attempts` counts every try that was made.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("generation failed after {attempts} attempt(s): {last}")]
pub struct GenerateError {
    pub attempts: u32,
    pub last: ClientError,
}

/// Calls the client with exponential backoff between failed attempts.
pub fn generate(
    client: &dyn LanguageModel,
    prompt: &Prompt,
    params: &SamplingParams,
    retry: &RetryPolicy,
) -> Result<Generation, GenerateError> {
    let request = params.request(&prompt.rendered);
    let attempts = retry.attempts.max(1);
    let mut last = ClientError::Empty;
    for attempt in 1..=attempts {
        let started = Instant::now();
        let outcome = client.complete(&request).and_then(|r| {
            if r.text.trim().is_empty() {
                Err(ClientError::Empty)
            } else {
                Ok(r)
            }
        });
        match outcome {
            Ok(r) => {
                let latency_ms = if r.latency_ms > 0 {
                    r.latency_ms
                } else {
                    started.elapsed().as_millis() as u64
                };
                log::debug!(
                    "generation ok: attempt={attempt} prompt_tokens={} completion_tokens={} latency_ms={latency_ms}",
                    r.prompt_tokens,
                    r.completion_tokens
                );
                return Ok(Generation {
                    explanation: Explanation::new(r.text),
                    attempts: attempt,
                    prompt_tokens: r.prompt_tokens,
                    completion_tokens: r.completion_tokens,
                    latency_ms,
                });
            }
            Err(e) => {
                log::warn!("generation attempt {attempt}/{attempts} failed: {e}");
                last = e;
                if attempt < attempts && !retry.base_delay.is_zero() {
                    thread::sleep(retry.base_delay * 2u32.pow(attempt - 1));
                }
            }
        }
    }
    Err(GenerateError { attempts, last })
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// Echoes the abstracts found in the prompt, in order, as the explanation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveMock;

impl LanguageModel for ExtractiveMock {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        let text = parse_abstracts(&request.prompt)
            .into_iter()
            .map(|(_, t)| {
                let t = t.trim().to_string();
                if t.ends_with(['.', '!', '?']) {
                    t
                } else {
                    format!("{t}.")
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        Ok(CompletionResponse {
            prompt_tokens: word_count(&request.prompt),
            completion_tokens: word_count(&text),
            text,
            latency_ms: 0,
        })
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptLine {
    prompt_sha256: String,
    response: String,
}

/// Replays fixed responses keyed by the SHA-256 of the rendered prompt.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    responses: BTreeMap<String, String>,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses.insert(prompt_hash(prompt), response.into());
    }

    pub fn insert_hash(&mut self, hash: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(hash.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Reads JSON lines `{"prompt_sha256": .., "response": ..}`.
    pub fn read<R: Read>(r: R) -> Result<Self, String> {
        let mut out = ScriptedMock::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScriptLine =
                serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            out.insert_hash(rec.prompt_sha256, rec.response);
        }
        Ok(out)
    }
}

impl LanguageModel for ScriptedMock {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        let h = prompt_hash(&request.prompt);
        let text = self
            .responses
            .get(&h)
            .cloned()
            .ok_or(ClientError::NoScript(h))?;
        Ok(CompletionResponse {
            prompt_tokens: word_count(&request.prompt),
            completion_tokens: word_count(&text),
            text,
            latency_ms: 0,
        })
    }
}

/// Posts the request as JSON and expects a `CompletionResponse`-shaped JSON body.
#[derive(Debug)]
pub struct HttpClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpClient {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl LanguageModel for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        let started = Instant::now();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ClientError::Timeout,
                other => ClientError::Transport(other.to_string()),
            })?;
        let mut body: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if body.latency_ms == 0 {
            body.latency_ms = started.elapsed().as_millis() as u64;
        }
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expl::prompt::{build_prompt, ContextDoc, Template};
    use crate::kgraph::DocId;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn prompt() -> Prompt {
        build_prompt(
            &"A".into(),
            &"Z".into(),
            &[ContextDoc {
                doc_id: DocId::new("D1"),
                text: "A affects B".into(),
            }],
            Template::Short,
        )
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        text: &'static str,
    }

    impl LanguageModel for Flaky {
        fn complete(&self, _: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(ClientError::Transport("boom".into()));
            }
            Ok(CompletionResponse {
                text: self.text.into(),
                prompt_tokens: 1,
                completion_tokens: 1,
                latency_ms: 5,
            })
        }
    }

    #[test]
    fn scripted_echo_splits_two_sentences() {
        let p = prompt();
        let mut m = ScriptedMock::new();
        m.insert(&p.rendered, "A affects B. B affects Z.");
        let g = generate(&m, &p, &SamplingParams::default(), &RetryPolicy::immediate(3)).unwrap();
        assert_eq!(g.explanation.text, "A affects B. B affects Z.");
        assert_eq!(g.explanation.sentences, vec!["A affects B.", "B affects Z."]);
        assert_eq!(g.attempts, 1);
    }

    #[test]
    fn empty_response_is_client_error() {
        let c = Flaky {
            failures: 0,
            calls: AtomicU32::new(0),
            text: "  ",
        };
        let e = generate(&c, &prompt(), &SamplingParams::default(), &RetryPolicy::immediate(3)).unwrap_err();
        assert_eq!(e.last, ClientError::Empty);
        assert_eq!(e.attempts, 3);
    }

    #[test]
    fn two_failures_then_success_uses_three_attempts() {
        let c = Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
            text: "A affects Z.",
        };
        let g = generate(&c, &prompt(), &SamplingParams::default(), &RetryPolicy::immediate(3)).unwrap();
        assert_eq!(g.attempts, 3);
        assert_eq!(g.latency_ms, 5);
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn extractive_mock_echoes_abstracts() {
        let r = ExtractiveMock.complete(&SamplingParams::default().request(&prompt().rendered)).unwrap();
        assert_eq!(r.text, "A affects B.");
    }

    #[test]
    fn script_file_round_trip() {
        let p = prompt();
        let line = format!("{{\"prompt_sha256\":\"{}\",\"response\":\"ok.\"}}\n", prompt_hash(&p.rendered));
        let m = ScriptedMock::read(line.as_bytes()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.complete(&SamplingParams::default().request(&p.rendered)).unwrap().text, "ok.");
        assert!(matches!(
            m.complete(&SamplingParams::default().request("other")),
            Err(ClientError::NoScript(_))
        ));
    }

    #[test]
    fn default_sampling_is_near_greedy() {
        let s = SamplingParams::default();
        assert_eq!((s.max_tokens, s.temperature, s.top_p), (1000, 1e-19, 1e-9));
    }
}

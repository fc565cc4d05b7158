//! LLM judge client: request payloads, the recorded-fixture backend used by
//! tests and reproducible runs, and an optional live HTTP backend.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JudgeError {
    #[error("judge transport failure: {0}")]
    Transport(String),
    #[error("judge request timed out after {0:?}")]
    Timeout(Duration),
    #[error("no recorded judge response for request digest {0}")]
    MissingFixture(String),
    #[error("invalid judge fixture file: {0}")]
    Fixture(String),
}

impl JudgeError {
    /// Transport-class failures may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Self::Transport(_) | Self::Timeout(_) | Self::MissingFixture(_)
        )
    }
}

/// What the judge is asked to assess. Field order is part of the digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum JudgeRequest {
    /// Rubric grading of a reasoning solution (three boxed criteria).
    Reasoning {
        question: String,
        gold_docs: Vec<String>,
        answer: String,
        solution: String,
    },
    /// Second-stage check of a promoted hard negative.
    Promotion {
        question: String,
        gold_docs: Vec<String>,
        candidate: String,
    },
    /// 0-100 scoring of a free-form prediction against a reference.
    Score100 {
        question: String,
        reference: String,
        prediction: String,
    },
}

impl JudgeRequest {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("judge request serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Prompt text sent to a live judge model.
    pub fn render_prompt(&self) -> String {
        match self {
            Self::Reasoning {
                question,
                gold_docs,
                answer,
                solution,
            } => REASONING_TEMPLATE
                .replace("{question}", question)
                .replace("{gold_docs}", &render_docs(gold_docs))
                .replace("{answer}", answer)
                .replace("{solution}", solution),
            Self::Promotion {
                question,
                gold_docs,
                candidate,
            } => format!(
                "Question: {question}\n\nKnown relevant documents:\n{}\n\nCandidate document:\n{candidate}\n\n\
                 Does the candidate document contain information needed to answer the question? \
                 Reply with exactly one word: relevant or irrelevant.",
                render_docs(gold_docs)
            ),
            Self::Score100 {
                question,
                reference,
                prediction,
            } => format!(
                "Question: {question}\n\nReference answer:\n{reference}\n\nModel answer:\n{prediction}\n\n\
                 Score the model answer for correctness against the reference on a scale from 0 to 100. \
                 End your reply with the score as [[N]]."
            ),
        }
    }
}

fn render_docs(docs: &[String]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("({}) {d}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rubric used for reasoning rewards. Slots: question, gold_docs, answer,
/// solution.
pub const REASONING_TEMPLATE: &str = "You are an expert evaluator assessing AI model answers to questions using supporting documents.
You will be provided with:
- A Question
- A set of Relevant Documents (the gold standard grounding sources)
- The Correct Answer
- An AI Model Solution

Background:
The AI model had access to a large pool of documents (indexed 0...N). Only a subset is truly
relevant. Other documents may appear in citations but are simply distractors (not fabricated).
The model's goal is to correctly answer the question while grounding its reasoning in the
relevant documents.

Your task:
Evaluate the model's solution objectively and consistently according to the criteria below.
Do not use information outside the provided inputs.

---

[Question]: {question}
[Relevant Documents]: {gold_docs}
[Correct Answer]: {answer}
[AI Model Solution]: {solution}

---

EVALUATION CRITERIA

Criterion 1: Reasoning Quality (1 or 0)
Score 1 if the solution shows: clear logical flow from evidence to conclusion, no
contradictions or fallacies, and coherent, well-structured reasoning.
Score 0 if the reasoning is flawed, contradictory, or incoherent.

Criterion 2: Document Grounding (1 or 0)
Score 1 if the solution: uses information primarily from relevant documents, represents
those documents accurately (no distortions), and does not rely significantly on irrelevant or
external knowledge. Score 0 if it misuses documents or ignores relevant evidence.

Criterion 3: Answer Correctness (1 or 0)
Score 1 if the final answer matches the provided correct answer.
Score 0 otherwise (including partial or incomplete answers).

---

RESPONSE FORMAT
For each criterion, provide a 1-2 sentence justification followed by the score:

Reasoning Quality Justification: [Your explanation]
\\boxed{Criterion 1: 1 or 0}

Document Grounding Justification: [Your explanation]
\\boxed{Criterion 2: 1 or 0}

Answer Correctness Justification: [Your explanation]
\\boxed{Criterion 3: 1 or 0}";

/// A judge backend: maps a request to the judge's raw response text.
pub trait Judge: Send + Sync {
    fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeError>;
}

impl<F> Judge for F
where
    F: Fn(&JudgeRequest) -> Result<String, JudgeError> + Send + Sync,
{
    fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeError> {
        self(request)
    }
}

/// One line of a recorded-fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub request_digest: String,
    pub response_text: String,
}

/// Replays recorded responses keyed by request digest.
#[derive(Debug, Clone, Default)]
pub struct RecordedJudge {
    responses: HashMap<String, String>,
}

impl RecordedJudge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request: &JudgeRequest, response: impl Into<String>) {
        self.responses.insert(request.digest(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, JudgeError> {
        let file = File::open(path).map_err(|e| JudgeError::Fixture(format!("{}: {e}", path.display())))?;
        let mut responses = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| JudgeError::Fixture(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| JudgeError::Fixture(format!("line {}: {e}", n + 1)))?;
            responses.insert(rec.request_digest, rec.response_text);
        }
        Ok(Self { responses })
    }

    /// Writes fixtures sorted by digest so files are reproducible.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut entries: Vec<_> = self.responses.iter().collect();
        entries.sort();
        let mut out = File::create(path)?;
        for (digest, text) in entries {
            let rec = FixtureRecord {
                request_digest: digest.clone(),
                response_text: text.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }
}

impl Judge for RecordedJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeError> {
        let digest = request.digest();
        self.responses
            .get(&digest)
            .cloned()
            .ok_or(JudgeError::MissingFixture(digest))
    }
}

/// OpenAI-compatible chat-completions backend.
#[cfg(feature = "live-judge")]
pub struct HttpJudge {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "live-judge")]
impl HttpJudge {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, JudgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| JudgeError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            api_key,
            timeout,
            client,
        })
    }
}

#[cfg(feature = "live-judge")]
impl Judge for HttpJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0.0,
            "messages": [{"role": "user", "content": request.render_prompt()}],
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                JudgeError::Timeout(self.timeout)
            } else {
                JudgeError::Transport(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(JudgeError::Transport(format!("HTTP {}", resp.status())));
        }
        let value: serde_json::Value = resp.json().map_err(|e| JudgeError::Transport(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| JudgeError::Transport("response has no message content".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    Live,
    Recorded,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Judge handle shared across workers. Caps concurrent requests and retries
/// retryable failures in live mode.
#[derive(Clone)]
pub struct JudgeClient {
    backend: Arc<dyn Judge>,
    mode: JudgeMode,
    max_in_flight: usize,
    retries: usize,
    gate: Arc<Semaphore>,
}

impl std::fmt::Debug for JudgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JudgeClient")
            .field("mode", &self.mode)
            .field("max_in_flight", &self.max_in_flight)
            .field("retries", &self.retries)
            .finish()
    }
}

impl JudgeClient {
    pub fn new(backend: Arc<dyn Judge>, mode: JudgeMode, max_in_flight: usize) -> Self {
        let max_in_flight = max_in_flight.max(1);
        Self {
            backend,
            mode,
            max_in_flight,
            retries: 0,
            gate: Arc::new(Semaphore::new(max_in_flight)),
        }
    }

    pub fn recorded(judge: RecordedJudge) -> Self {
        Self::new(Arc::new(judge), JudgeMode::Recorded, 8)
    }

    pub fn recorded_from_file(path: &Path) -> Result<Self, JudgeError> {
        Ok(Self::recorded(RecordedJudge::load(path)?))
    }

    #[cfg(feature = "live-judge")]
    pub fn live(endpoint: &str, model: &str, timeout: Duration, max_in_flight: usize, retries: usize) -> Result<Self, JudgeError> {
        let key = std::env::var("ICRKIT_JUDGE_API_KEY").ok();
        let backend = HttpJudge::new(endpoint, model, key, timeout)?;
        Ok(Self::new(Arc::new(backend), JudgeMode::Live, max_in_flight).with_retries(retries))
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn mode(&self) -> JudgeMode {
        self.mode
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn ask(&self, request: &JudgeRequest) -> Result<String, JudgeError> {
        let _slot = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.backend.complete(request) {
                Ok(text) => return Ok(text),
                // A recorded miss will not change on retry.
                Err(e @ JudgeError::MissingFixture(_)) => return Err(e),
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    log::warn!("judge request failed ({e}), retry {attempt}/{}", self.retries);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Parses a promotion verdict: the first verdict keyword in the response wins.
pub fn parse_promotion_verdict(text: &str) -> Option<bool> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    for (i, w) in words.iter().enumerate() {
        match *w {
            "irrelevant" | "no" | "false" => return Some(false),
            "not" if matches!(words.get(i + 1), Some(&"relevant")) => return Some(false),
            "relevant" | "yes" | "true" => return Some(true),
            _ => {}
        }
    }
    None
}

/// Parses a 0-100 score, preferring a `[[N]]` marker and otherwise taking the
/// last integer in range.
pub fn parse_score100(text: &str) -> Option<f64> {
    static MARKED: std::sync::LazyLock<regex::Regex> =
        std::sync::LazyLock::new(|| regex::Regex::new(r"\[\[\s*(\d+(?:\.\d+)?)\s*\]\]").unwrap());
    static NUMBER: std::sync::LazyLock<regex::Regex> =
        std::sync::LazyLock::new(|| regex::Regex::new(r"\d+(?:\.\d+)?").unwrap());
    let in_range = |v: f64| (0.0..=100.0).contains(&v).then_some(v);
    if let Some(c) = MARKED.captures_iter(text).last() {
        return c[1].parse().ok().and_then(in_range);
    }
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().parse().ok().and_then(in_range))
        .last()
}

//! Text-completion backends used for question generation and answering.
//!
//! The mock backends are pure functions of the prompt, so a pipeline run
//! with them is byte-reproducible.

use std::collections::HashMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::text::fnv1a64;

pub trait CompletionBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String, BackendError>;

    /// Completion for a prompt built from the record identified by `key`.
    fn complete_for(&self, key: &str, prompt: &str) -> Result<String, BackendError> {
        let _ = key;
        self.complete(prompt)
    }

    /// Upper bound on concurrent requests.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Calls `complete` up to `attempts` times, returning the first success or
/// the last error.
pub fn complete_with_retry(
    backend: &dyn CompletionBackend,
    key: &str,
    prompt: &str,
    attempts: u32,
) -> Result<String, BackendError> {
    let mut last = BackendError::Request("no attempts configured".into());
    for attempt in 0..attempts.max(1) {
        match backend.complete_for(key, prompt) {
            Ok(text) => return Ok(text),
            Err(e) => {
                log::debug!("{} attempt {} failed: {e}", backend.name(), attempt + 1);
                last = e;
            }
        }
    }
    Err(last)
}

/// First line of a completion, trimmed.
pub fn first_line(completion: &str) -> String {
    completion
        .trim_start()
        .lines()
        .next()
        .unwrap_or("")
        .trim()
        .to_owned()
}

/// Maps `f` over `items` with at most `max_in_flight` calls running at once.
/// Results come back in input order.
pub fn map_bounded<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let threads = max_in_flight.max(1);
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

/// Offline question generator.
///
/// Reads the target slot on the last prompt line (`x | y | z =>` or
/// `x | y =>`) and answers `what is the <y> of <x>?`.
#[derive(Debug, Clone, Default)]
pub struct MockQuestionBackend;

impl CompletionBackend for MockQuestionBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let slot = prompt
            .lines()
            .last()
            .and_then(|l| l.trim_end().strip_suffix("=>"))
            .ok_or_else(|| BackendError::Response("prompt has no target slot".into()))?;
        let parts: Vec<&str> = slot.split(" | ").map(str::trim).collect();
        if parts.len() < 2 {
            return Err(BackendError::Response(format!("cannot parse slot {slot:?}")));
        }
        Ok(format!(
            "what is the {} of {}?",
            parts[1].to_lowercase(),
            parts[0].to_lowercase()
        ))
    }

    fn max_in_flight(&self) -> usize {
        4
    }
}

/// Extracts the target question from a closed-book (`question =>`) or
/// with-context (`Question: ...` / `Answer:`) answering prompt.
pub fn target_question(prompt: &str) -> Option<&str> {
    let last = prompt.lines().last()?.trim_end();
    if let Some(q) = last.strip_suffix("=>") {
        return Some(q.trim());
    }
    if last.trim() == "Answer:" {
        return prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Question:"))
            .map(str::trim);
    }
    None
}

/// Answering test double that returns the gold answer.
///
/// Lookups go by record key (the qid) when one was registered, otherwise by
/// question text. With `miss_rate > 0`, a deterministic hash-selected share
/// of lookups is answered with `miss_answer` instead.
#[derive(Debug, Clone)]
pub struct EchoGoldBackend {
    by_key: HashMap<String, String>,
    answers: HashMap<String, String>,
    miss_rate: f64,
    miss_answer: String,
}

impl EchoGoldBackend {
    /// Keyed by question text.
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            by_key: HashMap::new(),
            answers: pairs.into_iter().collect(),
            miss_rate: 0.0,
            miss_answer: "unknown".into(),
        }
    }

    /// Keyed by qid, which stays exact when several items share a question.
    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a crate::generate::QaItem>) -> Self {
        let mut echo = Self::new([]);
        for item in items {
            echo.by_key.insert(item.qid.clone(), item.answer.clone());
            echo.answers
                .entry(item.question.clone())
                .or_insert_with(|| item.answer.clone());
        }
        echo
    }

    pub fn with_miss_rate(mut self, rate: f64) -> Self {
        self.miss_rate = rate.clamp(0.0, 1.0);
        self
    }

    fn misses(&self, question: &str) -> bool {
        (fnv1a64(question.as_bytes()) % 10_000) < (self.miss_rate * 10_000.0).round() as u64
    }
}

impl CompletionBackend for EchoGoldBackend {
    fn name(&self) -> &str {
        "echo-gold"
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let question = target_question(prompt)
            .ok_or_else(|| BackendError::Response("prompt has no target question".into()))?;
        if self.misses(question) {
            return Ok(self.miss_answer.clone());
        }
        self.answers
            .get(question)
            .cloned()
            .ok_or_else(|| BackendError::Response(format!("no gold answer for {question:?}")))
    }

    fn complete_for(&self, key: &str, prompt: &str) -> Result<String, BackendError> {
        match self.by_key.get(key) {
            Some(_) if self.misses(key) => Ok(self.miss_answer.clone()),
            Some(answer) => Ok(answer.clone()),
            None => self.complete(prompt),
        }
    }

    fn max_in_flight(&self) -> usize {
        4
    }
}

/// Settings for a live HTTP text-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionProfile {
    pub name: String,
    /// Full endpoint URL, e.g. `https://api.example.com/v1/completions`.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub model_field: String,
    pub prompt_field: String,
    /// JSON pointer to the completion text in the response.
    pub response_pointer: String,
    /// Extra request fields such as `temperature` and `max_tokens`.
    pub parameters: serde_json::Map<String, serde_json::Value>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for CompletionProfile {
    fn default() -> Self {
        let mut parameters = serde_json::Map::new();
        parameters.insert("temperature".into(), 0.into());
        parameters.insert("max_tokens".into(), 64.into());
        Self {
            name: "http".into(),
            url: String::new(),
            model: String::new(),
            api_key_env: None,
            model_field: "model".into(),
            prompt_field: "prompt".into(),
            response_pointer: "/choices/0/text".into(),
            parameters,
            timeout_secs: 30,
            max_in_flight: 4,
        }
    }
}

pub struct HttpCompletionBackend {
    profile: CompletionProfile,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpCompletionBackend {
    pub fn new(profile: CompletionProfile) -> Result<Self, BackendError> {
        if profile.url.is_empty() {
            return Err(BackendError::Config("completion profile has no url".into()));
        }
        let api_key = match &profile.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(profile.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            profile,
            api_key,
            client,
        })
    }
}

impl CompletionBackend for HttpCompletionBackend {
    fn name(&self) -> &str {
        &self.profile.name
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut body = self.profile.parameters.clone();
        if !self.profile.model.is_empty() {
            body.insert(self.profile.model_field.clone(), self.profile.model.clone().into());
        }
        body.insert(self.profile.prompt_field.clone(), prompt.into());
        let mut request = self.client.post(&self.profile.url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(map_reqwest)?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Request(format!("status {status}")));
        }
        let value: serde_json::Value = response.json().map_err(map_reqwest)?;
        value
            .pointer(&self.profile.response_pointer)
            .and_then(serde_json::Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| {
                BackendError::Response(format!("no string at {}", self.profile.response_pointer))
            })
    }

    fn max_in_flight(&self) -> usize {
        self.profile.max_in_flight.max(1)
    }
}

pub(crate) fn map_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Request(e.to_string())
    }
}

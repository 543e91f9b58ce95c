//! Text-completion backends.
//!
//! [`HttpBackend`] talks to a chat-completions style endpoint. [`ScriptedBackend`]
//! replays canned responses and records every prompt it receives, which is
//! what the engine tests use to pin call counts and ordering.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::YES_NO_INSTRUCTION;

pub const ENV_BASE_URL: &str = "DL_API_BASE_URL";
pub const ENV_API_KEY: &str = "DL_API_KEY";
pub const ENV_MODEL: &str = "DL_MODEL";

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    pub temperature: f32,
    pub max_tokens: u32,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
}

impl GenerationParams {
    pub fn simulation(model_name: impl Into<String>) -> Self {
        GenerationParams {
            model_name: model_name.into(),
            temperature: 1.0,
            max_tokens: 256,
            timeout: Duration::from_secs(30),
        }
    }

    /// A YES/NO answer needs a single token; a little slack covers
    /// tokenizers that split punctuation.
    pub fn trigger_check(model_name: impl Into<String>) -> Self {
        GenerationParams {
            max_tokens: 4,
            ..GenerationParams::simulation(model_name)
        }
    }

    pub fn check(&self) -> Result<(), BackendError> {
        if self.timeout.is_zero() {
            return Err(BackendError::InvalidParams(
                "timeout must be positive".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidParams(
                "max_tokens must be at least 1".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidParams(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted backend has no queued response for this {0:?} prompt")]
    QueueExhausted(PromptKind),
    #[error("invalid request: {0}")]
    InvalidParams(String),
}

impl BackendError {
    /// Whether re-sending the same prompt could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout
                | BackendError::Transport(_)
                | BackendError::MalformedResponse(_)
                | BackendError::HttpStatus {
                    code: 429 | 500..=599,
                    ..
                }
        )
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        (**self).complete(prompt, params)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        (**self).complete(prompt, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Simulation,
    TriggerCheck,
}

/// Trigger-check prompts carry the YES/NO instruction; everything else is a
/// simulation prompt. A prompt containing both instructions counts as a
/// trigger check.
pub fn classify_prompt(prompt: &str) -> PromptKind {
    if prompt.contains(YES_NO_INSTRUCTION) {
        PromptKind::TriggerCheck
    } else {
        PromptKind::Simulation
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Any,
    PromptContains(String),
    IsTriggerCheck,
    IsSimulation,
}

impl Matcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::PromptContains(needle) => prompt.contains(needle.as_str()),
            Matcher::IsTriggerCheck => classify_prompt(prompt) == PromptKind::TriggerCheck,
            Matcher::IsSimulation => classify_prompt(prompt) == PromptKind::Simulation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub response: String,
}

/// On-disk form of a scripted backend, as taken by `--backend scripted:<file>`.
///
/// ```json
/// { "responses": [
///     { "match": "is_simulation", "response": "<line>Ava: Hi</line>" },
///     { "match": "is_trigger_check", "response": "NO" },
///     { "match": { "prompt_contains": "Has Ava left?" }, "response": "YES" }
/// ] }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFixture {
    pub responses: Vec<ScriptedResponse>,
}

impl ScriptedFixture {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub kind: PromptKind,
    pub prompt: String,
    pub answered: bool,
}

/// Replays queued responses. Each call consumes the earliest queued entry
/// whose matcher accepts the prompt; an empty match is an error.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<ScriptedResponse>>,
    requests: Mutex<Vec<RecordedRequest>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fixture(fixture: ScriptedFixture) -> Self {
        let backend = Self::new();
        backend.queue.lock().unwrap().extend(fixture.responses);
        backend
    }

    /// Builds a backend from a fixture, permuting the responses among the
    /// slots that share a matcher. Trigger-answer schedules keyed by
    /// `prompt_contains` keep their relative order per condition.
    pub fn from_fixture_seeded(fixture: ScriptedFixture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut responses = fixture.responses;
        let mut classes: Vec<Matcher> = Vec::new();
        for r in &responses {
            if !classes.contains(&r.matcher) {
                classes.push(r.matcher.clone());
            }
        }
        for class in classes {
            let slots: Vec<usize> = (0..responses.len())
                .filter(|&i| responses[i].matcher == class)
                .collect();
            let mut texts: Vec<String> = slots
                .iter()
                .map(|&i| std::mem::take(&mut responses[i].response))
                .collect();
            texts.shuffle(&mut rng);
            for (slot, text) in slots.into_iter().zip(texts) {
                responses[slot].response = text;
            }
        }
        Self::from_fixture(ScriptedFixture { responses })
    }

    pub fn push(&self, matcher: Matcher, response: impl Into<String>) -> &Self {
        self.queue.lock().unwrap().push_back(ScriptedResponse {
            matcher,
            response: response.into(),
        });
        self
    }

    pub fn push_line(&self, line: impl AsRef<str>) -> &Self {
        self.push(
            Matcher::IsSimulation,
            format!("<line>{}</line>", line.as_ref()),
        )
    }

    pub fn push_answer(&self, yes: bool) -> &Self {
        self.push(Matcher::IsTriggerCheck, if yes { "YES" } else { "NO" })
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self, kind: PromptKind) -> usize {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.kind == kind)
            .count()
    }

    pub fn clear_requests(&self) {
        self.requests.lock().unwrap().clear();
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidParams("prompt is empty".into()));
        }
        params.check()?;
        let kind = classify_prompt(prompt);
        let response = {
            let mut queue = self.queue.lock().unwrap();
            queue
                .iter()
                .position(|r| r.matcher.matches(prompt))
                .and_then(|i| queue.remove(i))
                .map(|r| r.response)
        };
        self.requests.lock().unwrap().push(RecordedRequest {
            kind,
            prompt: prompt.to_string(),
            answered: response.is_some(),
        });
        response.ok_or(BackendError::QueueExhausted(kind))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

/// Chat-completions client. The whole prompt goes out as one user message;
/// the first choice's content comes back. No retries happen here.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            client,
        })
    }

    /// Reads `DL_API_BASE_URL` and `DL_API_KEY`; returns the client and the
    /// model named by `DL_MODEL`.
    pub fn from_env() -> Result<(Self, String), BackendError> {
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
        Ok((HttpBackend::new(&base, key)?, model))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidParams("prompt is empty".into()));
        }
        params.check()?;
        let body = ChatRequest {
            model: &params.model_name,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut request = self
            .client
            .post(&self.endpoint)
            .timeout(params.timeout)
            .json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(transport_error)?;
        let status = response.status();
        let text = response.text().map_err(transport_error)?;
        if !status.is_success() {
            return Err(BackendError::HttpStatus {
                code: status.as_u16(),
                body: text,
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))
    }
}

fn transport_error(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

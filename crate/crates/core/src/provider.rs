//! Chat-completion providers.
//!
//! A [`Gateway`] wraps a [`Transport`] (hosted HTTP endpoint or scripted
//! stand-in) with retries, exponential backoff and a shared token-bucket rate
//! limiter. Callers only see blocking latency and a [`Completion`] or a
//! [`ProviderError`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Conversation, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    OpenaiCompatible,
    Scripted,
}

/// Per-model request tweaks declared in configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestDecorations {
    /// Appended to the last user message on the wire (e.g. `/no_think`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_suffix: Option<String>,
    /// Extra top-level fields merged into the request body.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra_body: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub provider: ProviderKind,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
    #[serde(default)]
    pub decorations: RequestDecorations,
}

impl ModelSpec {
    pub fn scripted(model_name: impl Into<String>) -> Self {
        Self {
            provider: ProviderKind::Scripted,
            model_name: model_name.into(),
            endpoint: None,
            credential_ref: None,
            decorations: RequestDecorations::default(),
        }
    }

    pub fn openai_compatible(
        model_name: impl Into<String>,
        endpoint: impl Into<String>,
        credential_ref: impl Into<String>,
    ) -> Self {
        Self {
            provider: ProviderKind::OpenaiCompatible,
            model_name: model_name.into(),
            endpoint: Some(endpoint.into()),
            credential_ref: Some(credential_ref.into()),
            decorations: RequestDecorations::default(),
        }
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        match (self.provider, &self.endpoint) {
            (ProviderKind::OpenaiCompatible, None) => Err(ProviderError::Config(
                "an openai-compatible model needs an endpoint".into(),
            )),
            (ProviderKind::Scripted, Some(_)) => Err(ProviderError::Config(
                "a scripted model takes no endpoint".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl DecodingParams {
    pub const GREEDY: DecodingParams = DecodingParams {
        temperature: 0.0,
        max_output_tokens: 4096,
    };
    pub const RESAMPLE: DecodingParams = DecodingParams {
        temperature: 0.8,
        max_output_tokens: 4096,
    };
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self::GREEDY
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Internal reasoning tokens, when the provider reports them. Not part of
    /// [`TokenUsage::billed`].
    pub reasoning_tokens: u64,
}

impl TokenUsage {
    /// Prompt plus completion tokens.
    pub fn billed(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
            reasoning_tokens: self.reasoning_tokens + rhs.reasoning_tokens,
        }
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    /// Number of transport calls made, including the successful one.
    pub attempts_made: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Transient failures persisted through the whole retry budget.
    #[error("provider failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    /// The provider refused the request outright (non-retryable).
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no scripted completion for task `{task_id}` round {round}")]
    ScriptGap { task_id: String, round: u32 },
}

impl ProviderError {
    /// Fatal errors abort the run; the rest are recorded as api_error attempts.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            ProviderError::Auth(_) | ProviderError::Config(_) | ProviderError::ScriptGap { .. }
        )
    }
}

/// Outcome of a single transport call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Transient(String),
    Rejected(String),
    Auth(String),
    Fatal(ProviderError),
}

pub trait Transport: Send + Sync {
    fn send(&self, conversation: &Conversation, params: &DecodingParams) -> Result<(String, TokenUsage), TransportError>;
}

/// Anything that turns a conversation into a completion.
pub trait Provider: Send + Sync {
    fn generate(&self, conversation: &Conversation, params: &DecodingParams) -> Result<Completion, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total tries per call, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Up to this fraction of the nominal delay is added as jitter; must stay
    /// below 1.0 for delays to be nondecreasing.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(30),
            jitter: 0.5,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            jitter: 0.0,
        }
    }

    /// Delay before retry number `retry` (0-based), given a jitter draw in [0, 1).
    pub fn delay(&self, retry: u32, draw: f64) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * 2f64.powi(retry.min(30) as i32);
        let jittered = nominal * (1.0 + self.jitter.clamp(0.0, 0.99) * draw);
        Duration::from_secs_f64(jittered.min(self.max_delay.as_secs_f64()))
    }
}

/// Token bucket: `per_minute` requests refilled continuously, bursts up to
/// `burst`.
pub struct RateLimiter {
    state: Mutex<Bucket>,
    per_second: f64,
    burst: f64,
}

struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn new(per_minute: u32, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self {
            state: Mutex::new(Bucket {
                tokens: burst,
                last: Instant::now(),
            }),
            per_second: f64::from(per_minute.max(1)) / 60.0,
            burst,
        }
    }

    /// Blocks until a request may be sent.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut b = self.state.lock().unwrap();
                let now = Instant::now();
                let refill = now.duration_since(b.last).as_secs_f64() * self.per_second;
                b.tokens = (b.tokens + refill).min(self.burst);
                b.last = now;
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - b.tokens) / self.per_second)
            };
            thread::sleep(wait);
        }
    }
}

pub struct Gateway<T> {
    transport: T,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    sleeper: fn(Duration),
}

impl<T: Transport> Gateway<T> {
    pub fn new(transport: T, retry: RetryPolicy) -> Self {
        Self {
            transport,
            retry,
            limiter: None,
            sleeper: thread::sleep,
        }
    }

    pub fn with_rate_limit(mut self, limiter: RateLimiter) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

impl<T: Transport> Provider for Gateway<T> {
    fn generate(&self, conversation: &Conversation, params: &DecodingParams) -> Result<Completion, ProviderError> {
        if conversation.system_count() != 1 || conversation.messages.first().map(|m| m.role) != Some(Role::System) {
            return Err(ProviderError::Config(
                "conversation must start with exactly one system message".into(),
            ));
        }
        let mut rng = rand::thread_rng();
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.transport.send(conversation, params) {
                Ok((text, usage)) => {
                    return Ok(Completion {
                        text,
                        usage,
                        attempts_made: attempt,
                    })
                }
                Err(TransportError::Transient(msg)) => {
                    tracing::debug!(attempt, %msg, "transient provider failure");
                    last = msg;
                    if attempt < self.retry.max_attempts {
                        (self.sleeper)(self.retry.delay(attempt - 1, rng.gen::<f64>()));
                    }
                }
                Err(TransportError::Rejected(msg)) => return Err(ProviderError::Rejected(msg)),
                Err(TransportError::Auth(msg)) => return Err(ProviderError::Auth(msg)),
                Err(TransportError::Fatal(e)) => return Err(e),
            }
        }
        Err(ProviderError::Exhausted {
            attempts: self.retry.max_attempts.max(1),
            last,
        })
    }
}

/// Surrogate token count for scripted runs: bytes / 4, rounded up.
pub fn surrogate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    /// Fails transiently `fail_times` times, then returns `completion`.
    Flaky { completion: String, fail_times: u32 },
    /// Always fails transiently.
    AlwaysFail { always_fail: bool },
    Reply(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ScriptLine {
    task_id: String,
    round: u32,
    #[serde(flatten)]
    entry: ScriptLineEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum ScriptLineEntry {
    Flaky { completion: String, fail_times: u32 },
    Reply { completion: String },
    AlwaysFail { always_fail: bool },
}

enum ScriptSource {
    Keyed(HashMap<(String, u32), ScriptEntry>),
    Queue(Vec<String>),
}

/// Deterministic stand-in model. Replies are keyed by the conversation's
/// `(task_id, round)` metadata, or served in order from a queue.
pub struct ScriptedTransport {
    source: ScriptSource,
    calls: Mutex<HashMap<(String, u32), u32>>,
    next: Mutex<usize>,
}

impl fmt::Debug for ScriptedTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScriptedTransport")
    }
}

impl ScriptedTransport {
    pub fn keyed(script: HashMap<(String, u32), ScriptEntry>) -> Self {
        Self {
            source: ScriptSource::Keyed(script),
            calls: Mutex::new(HashMap::new()),
            next: Mutex::new(0),
        }
    }

    pub fn queue(replies: Vec<String>) -> Self {
        Self {
            source: ScriptSource::Queue(replies),
            calls: Mutex::new(HashMap::new()),
            next: Mutex::new(0),
        }
    }

    /// Reads a script file: one JSON object per line with `task_id`, `round`
    /// and either `completion` (optionally with `fail_times`) or
    /// `always_fail: true`.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ProviderError> {
        let mut script = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(line)
                .map_err(|e| ProviderError::Config(format!("script line {}: {e}", idx + 1)))?;
            let entry = match parsed.entry {
                ScriptLineEntry::Flaky { completion, fail_times } => ScriptEntry::Flaky { completion, fail_times },
                ScriptLineEntry::Reply { completion } => ScriptEntry::Reply(completion),
                ScriptLineEntry::AlwaysFail { always_fail } => ScriptEntry::AlwaysFail { always_fail },
            };
            script.insert((parsed.task_id, parsed.round), entry);
        }
        Ok(Self::keyed(script))
    }

    /// Serializes a keyed script in the file format read by [`Self::from_jsonl`].
    pub fn to_jsonl(script: &[(String, u32, ScriptEntry)]) -> String {
        let mut out = String::new();
        for (task_id, round, entry) in script {
            let entry = match entry.clone() {
                ScriptEntry::Flaky { completion, fail_times } => ScriptLineEntry::Flaky { completion, fail_times },
                ScriptEntry::Reply(completion) => ScriptLineEntry::Reply { completion },
                ScriptEntry::AlwaysFail { always_fail } => ScriptLineEntry::AlwaysFail { always_fail },
            };
            let line = ScriptLine {
                task_id: task_id.clone(),
                round: *round,
                entry,
            };
            out.push_str(&serde_json::to_string(&line).expect("script line serializes"));
            out.push('\n');
        }
        out
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, conversation: &Conversation, _params: &DecodingParams) -> Result<(String, TokenUsage), TransportError> {
        let text = match &self.source {
            ScriptSource::Queue(replies) => {
                let mut next = self.next.lock().unwrap();
                let reply = replies.get(*next).cloned().ok_or_else(|| {
                    TransportError::Fatal(ProviderError::ScriptGap {
                        task_id: conversation.metadata.task_id.clone(),
                        round: conversation.metadata.round,
                    })
                })?;
                *next += 1;
                reply
            }
            ScriptSource::Keyed(script) => {
                let key = (conversation.metadata.task_id.clone(), conversation.metadata.round);
                let entry = script.get(&key).ok_or_else(|| {
                    TransportError::Fatal(ProviderError::ScriptGap {
                        task_id: key.0.clone(),
                        round: key.1,
                    })
                })?;
                let mut calls = self.calls.lock().unwrap();
                let seen = calls.entry(key).or_insert(0);
                *seen += 1;
                match entry {
                    ScriptEntry::Reply(text) => text.clone(),
                    ScriptEntry::Flaky { completion, fail_times } => {
                        if *seen <= *fail_times {
                            return Err(TransportError::Transient("scripted transient failure".into()));
                        }
                        completion.clone()
                    }
                    ScriptEntry::AlwaysFail { .. } => {
                        return Err(TransportError::Transient("scripted transient failure".into()))
                    }
                }
            }
        };
        let prompt_bytes: String = conversation.messages.iter().map(|m| m.content.as_str()).collect();
        let usage = TokenUsage {
            prompt_tokens: surrogate_tokens(&prompt_bytes),
            completion_tokens: surrogate_tokens(&text),
            reasoning_tokens: 0,
        };
        Ok((text, usage))
    }
}

/// Chat-completions over HTTP (the OpenAI wire dialect, which Groq, vLLM,
/// Vertex's OpenAI endpoint and most hosted APIs accept).
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: String,
    decorations: RequestDecorations,
}

impl HttpTransport {
    /// Reads the credential from the environment variable named in `spec`.
    pub fn from_spec(spec: &ModelSpec, request_timeout: Duration) -> Result<Self, ProviderError> {
        spec.check()?;
        let endpoint = spec.endpoint.clone().unwrap_or_default();
        let var = spec
            .credential_ref
            .clone()
            .ok_or_else(|| ProviderError::Config("no credential environment variable named".into()))?;
        let api_key = std::env::var(&var)
            .map_err(|_| ProviderError::Config(format!("environment variable `{var}` is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url: chat_url(&endpoint),
            model: spec.model_name.clone(),
            api_key,
            decorations: spec.decorations.clone(),
        })
    }

    pub fn request_body(&self, conversation: &Conversation, params: &DecodingParams) -> serde_json::Value {
        request_body(&self.model, &self.decorations, conversation, params)
    }
}

pub fn chat_url(endpoint: &str) -> String {
    let trimmed = endpoint.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

pub fn request_body(
    model: &str,
    decorations: &RequestDecorations,
    conversation: &Conversation,
    params: &DecodingParams,
) -> serde_json::Value {
    let last_user = conversation.messages.iter().rposition(|m| m.role == Role::User);
    let messages: Vec<serde_json::Value> = conversation
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut content = m.content.clone();
            if Some(i) == last_user {
                if let Some(suffix) = &decorations.user_suffix {
                    content.push_str(suffix);
                }
            }
            serde_json::json!({ "role": m.role.as_str(), "content": content })
        })
        .collect();
    let mut body = serde_json::json!({
        "model": model,
        "messages": messages,
        "temperature": params.temperature,
        "max_tokens": params.max_output_tokens,
    });
    let obj = body.as_object_mut().expect("body is an object");
    for (k, v) in &decorations.extra_body {
        obj.insert(k.clone(), v.clone());
    }
    body
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    completion_tokens_details: Option<CompletionDetails>,
}

#[derive(Deserialize)]
struct CompletionDetails {
    #[serde(default)]
    reasoning_tokens: u64,
}

/// Decodes a chat-completions response body.
pub fn parse_response(body: &str) -> Result<(String, TokenUsage), TransportError> {
    let resp: ChatResponse = serde_json::from_str(body)
        .map_err(|e| TransportError::Transient(format!("undecodable response: {e}")))?;
    let text = resp
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::Transient("response carried no completion".into()))?;
    let usage = resp.usage.map_or_else(TokenUsage::default, |u| TokenUsage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
        reasoning_tokens: u.completion_tokens_details.map_or(0, |d| d.reasoning_tokens),
    });
    Ok((text, usage))
}

impl Transport for HttpTransport {
    fn send(&self, conversation: &Conversation, params: &DecodingParams) -> Result<(String, TokenUsage), TransportError> {
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(conversation, params))
            .send()
            .map_err(|e| TransportError::Transient(redact(&e.to_string(), &self.api_key)))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| TransportError::Transient(redact(&e.to_string(), &self.api_key)))?;
        let snippet: String = redact(&body, &self.api_key).chars().take(300).collect();
        match status.as_u16() {
            200..=299 => parse_response(&body),
            401 | 403 => Err(TransportError::Auth(format!("HTTP {status}: {snippet}"))),
            408 | 409 | 425 | 429 | 500..=599 => {
                Err(TransportError::Transient(format!("HTTP {status}: {snippet}")))
            }
            _ => Err(TransportError::Rejected(format!("HTTP {status}: {snippet}"))),
        }
    }
}

fn redact(text: &str, secret: &str) -> String {
    if secret.is_empty() {
        text.to_string()
    } else {
        text.replace(secret, "<redacted>")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Conversation, ConversationMeta, Message};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn conv(task: &str, round: u32) -> Conversation {
        Conversation {
            messages: vec![
                Message::system("sys"),
                Message::user("write add"),
            ],
            metadata: ConversationMeta {
                task_id: task.into(),
                round,
            },
        }
    }

    fn quiet<T: Transport>(t: T, tries: u32) -> Gateway<T> {
        let mut g = Gateway::new(t, RetryPolicy::no_delay(tries));
        g.sleeper = |_| {};
        g
    }

    #[test]
    fn queue_in_order() {
        let g = quiet(ScriptedTransport::queue(vec!["A".into(), "B".into()]), 1);
        let p = DecodingParams::GREEDY;
        assert_eq!(g.generate(&conv("x", 0), &p).unwrap().text, "A");
        assert_eq!(g.generate(&conv("x", 0), &p).unwrap().text, "B");
    }

    #[test]
    fn keyed_lookup_and_gap() {
        let mut script = HashMap::new();
        script.insert(("HE/0".to_string(), 0), ScriptEntry::Reply("x".into()));
        let g = quiet(ScriptedTransport::keyed(script), 3);
        assert_eq!(g.generate(&conv("HE/0", 0), &DecodingParams::GREEDY).unwrap().text, "x");
        let err = g.generate(&conv("HE/0", 1), &DecodingParams::GREEDY).unwrap_err();
        assert!(matches!(err, ProviderError::ScriptGap { round: 1, .. }));
        assert!(err.is_fatal());

        let empty = quiet(ScriptedTransport::keyed(HashMap::new()), 3);
        assert!(matches!(
            empty.generate(&conv("a", 0), &DecodingParams::GREEDY),
            Err(ProviderError::ScriptGap { .. })
        ));
    }

    #[test]
    fn surrogate_usage() {
        let mut script = HashMap::new();
        script.insert(("t".to_string(), 0), ScriptEntry::Reply("12345678".into()));
        let g = quiet(ScriptedTransport::keyed(script), 1);
        let c = g.generate(&conv("t", 0), &DecodingParams::GREEDY).unwrap();
        assert_eq!(c.usage.completion_tokens, 2);
        // "sys" + "write add" = 12 bytes
        assert_eq!(c.usage.prompt_tokens, 3);
        assert_eq!(surrogate_tokens("123456789"), 3);
    }

    #[test]
    fn flaky_then_success_counts_attempts() {
        let mut script = HashMap::new();
        script.insert(
            ("t".to_string(), 0),
            ScriptEntry::Flaky {
                completion: "ok".into(),
                fail_times: 2,
            },
        );
        let g = quiet(ScriptedTransport::keyed(script), 3);
        let c = g.generate(&conv("t", 0), &DecodingParams::GREEDY).unwrap();
        assert_eq!(c.text, "ok");
        assert_eq!(c.attempts_made, 3);
    }

    #[test]
    fn exhausted_budget() {
        let mut script = HashMap::new();
        script.insert(("t".to_string(), 0), ScriptEntry::AlwaysFail { always_fail: true });
        let g = quiet(ScriptedTransport::keyed(script), 5);
        let err = g.generate(&conv("t", 0), &DecodingParams::GREEDY).unwrap_err();
        assert!(matches!(err, ProviderError::Exhausted { attempts: 5, .. }));
        assert!(!err.is_fatal());
    }

    #[test]
    fn rejects_bad_conversation() {
        let g = quiet(ScriptedTransport::queue(vec!["A".into()]), 1);
        let mut c = conv("t", 0);
        c.messages.push(Message::system("again"));
        assert!(matches!(
            g.generate(&c, &DecodingParams::GREEDY),
            Err(ProviderError::Config(_))
        ));
    }

    #[test]
    fn backoff_nondecreasing_with_jitter() {
        let policy = RetryPolicy::default();
        let mut prev = Duration::ZERO;
        for retry in 0..12 {
            // worst case: max jitter now, none next time
            let hi = policy.delay(retry, 0.999);
            let lo_next = policy.delay(retry + 1, 0.0);
            assert!(lo_next >= hi, "retry {retry}: {lo_next:?} < {hi:?}");
            assert!(hi >= prev);
            prev = hi;
        }
        assert_eq!(policy.delay(20, 0.5), Duration::from_secs(30));
        assert_eq!(policy.delay(0, 0.0), Duration::from_secs(1));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(600, 1);
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        // first is free, the next three wait ~100 ms each
        assert!(start.elapsed() >= Duration::from_millis(280));
    }

    #[test]
    fn script_file_round_trip() {
        let script = vec![
            ("a".to_string(), 0, ScriptEntry::Reply("x".into())),
            ("a".to_string(), 1, ScriptEntry::Flaky { completion: "y".into(), fail_times: 1 }),
            ("b".to_string(), 0, ScriptEntry::AlwaysFail { always_fail: true }),
        ];
        let text = ScriptedTransport::to_jsonl(&script);
        let t = ScriptedTransport::from_jsonl(&text).unwrap();
        let ScriptSource::Keyed(map) = &t.source else { panic!() };
        for (task, round, entry) in script {
            assert_eq!(map[&(task, round)], entry);
        }
    }

    #[test]
    fn request_body_shape_and_decorations() {
        let mut deco = RequestDecorations {
            user_suffix: Some(" /no_think".into()),
            ..Default::default()
        };
        deco.extra_body.insert("seed".into(), serde_json::json!(7));
        let c = conv("t", 0);
        let body = request_body("qwen", &deco, &c, &DecodingParams::GREEDY);
        assert_eq!(body["model"], "qwen");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 4096);
        assert_eq!(body["seed"], 7);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "write add /no_think");
        // the conversation itself is untouched
        assert_eq!(c.messages[1].content, "write add");
    }

    #[test]
    fn response_parsing() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"def f(): pass"}}],
            "usage":{"prompt_tokens":10,"completion_tokens":4,"completion_tokens_details":{"reasoning_tokens":7}}}"#;
        let (text, usage) = parse_response(body).unwrap();
        assert_eq!(text, "def f(): pass");
        assert_eq!(usage, TokenUsage { prompt_tokens: 10, completion_tokens: 4, reasoning_tokens: 7 });
        assert_eq!(usage.billed(), 14);
        assert!(parse_response("{}").is_err());
    }

    #[test]
    fn chat_url_normalized() {
        assert_eq!(chat_url("https://x/v1/"), "https://x/v1/chat/completions");
        assert_eq!(chat_url("https://x/v1/chat/completions"), "https://x/v1/chat/completions");
    }

    /// Serves the given (status, body) pairs, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn http_round_trip_with_retry() {
        let ok = r#"{"choices":[{"message":{"content":"hello"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let (url, server) = serve(vec![(429, "{}".into()), (200, ok.into())]);
        std::env::set_var("MEND_TEST_KEY_A", "sk-test-123");
        let spec = ModelSpec::openai_compatible("m", url, "MEND_TEST_KEY_A");
        let g = quiet(HttpTransport::from_spec(&spec, Duration::from_secs(5)).unwrap(), 3);
        let c = g.generate(&conv("t", 0), &DecodingParams::GREEDY).unwrap();
        assert_eq!(c.text, "hello");
        assert_eq!(c.attempts_made, 2);
        assert_eq!(c.usage.prompt_tokens, 3);
        let seen = server.join().unwrap();
        assert!(seen[1].starts_with("authorization: Bearer sk-test-123") || seen[1].starts_with("Authorization: Bearer sk-test-123"));
        assert!(seen[1].contains("\"model\":\"m\""));
    }

    #[test]
    fn http_auth_failure_is_fatal() {
        let (url, server) = serve(vec![(401, r#"{"error":"bad key sk-test-456"}"#.into())]);
        std::env::set_var("MEND_TEST_KEY_B", "sk-test-456");
        let spec = ModelSpec::openai_compatible("m", url, "MEND_TEST_KEY_B");
        let g = quiet(HttpTransport::from_spec(&spec, Duration::from_secs(5)).unwrap(), 3);
        let err = g.generate(&conv("t", 0), &DecodingParams::GREEDY).unwrap_err();
        assert!(err.is_fatal());
        let msg = err.to_string();
        assert!(!msg.contains("sk-test-456"), "{msg}");
        server.join().unwrap();
    }

    #[test]
    fn missing_credential_is_config_error() {
        let spec = ModelSpec::openai_compatible("m", "http://localhost:1", "MEND_TEST_KEY_UNSET");
        assert!(matches!(
            HttpTransport::from_spec(&spec, Duration::from_secs(1)),
            Err(ProviderError::Config(_))
        ));
    }
}

//! Chat-completions client for the generator and judge models, plus a
//! deterministic scripted mock server for fully offline runs.
//!
//! The wire protocol is the OpenAI-compatible subset (model, messages,
//! temperature, max_tokens in; choices[0].message.content out), so any
//! compatible local or hosted endpoint works; model names are plain
//! config strings.

mod http;
pub mod mock;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, Rng};

pub use mock::{run_mock, FixtureEntry, MockServer, TranscriptEntry};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Field order is part of the contract: serialized bodies are compared in
/// golden tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    /// Temperature defaults to 0 for deterministic generation.
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>, max_tokens: usize) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest(
                "at least one user message is required".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} < 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Base URL, e.g. http://127.0.0.1:8080; /chat/completions is appended.
    pub endpoint: String,
    /// Name of the environment variable holding the API key; keys never
    /// appear in files or argv.
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080".into(),
            api_key_env: None,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 200,
            max_in_flight: 4,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight < 1 {
            return Err(GatewayError::InvalidRequest(
                "max_in_flight must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Fingerprint used by the mock to match scripted replies: FNV-1a over
/// the concatenated message contents, in hex.
pub fn request_fingerprint(messages: &[ChatMessage]) -> String {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for m in messages {
        for &b in m.content.as_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

/// Delay before retry `attempt` (1-based): base * 2^(attempt-1) with a
/// jitter factor in [1, 2). The factor range keeps the schedule
/// non-decreasing, since doubling outruns any jitter draw.
pub fn backoff_delay_ms(base_ms: u64, attempt: u32, jitter: &mut Rng) -> u64 {
    let base = base_ms.saturating_mul(1u64 << (attempt - 1).min(32));
    (base as f64 * jitter.uniform(1.0, 2.0)) as u64
}

/// Counting gate bounding concurrent requests.
struct InFlightGate {
    state: Mutex<usize>,
    cv: Condvar,
    max: usize,
}

impl InFlightGate {
    fn new(max: usize) -> Self {
        Self {
            state: Mutex::new(0),
            cv: Condvar::new(),
            max,
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut count = self.state.lock().unwrap();
        while *count >= self.max {
            count = self.cv.wait(count).unwrap();
        }
        *count += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a InFlightGate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.state.lock().unwrap();
        *count -= 1;
        self.gate.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

/// Thread-shareable client. Each call is independent; concurrent calls
/// are bounded by the in-flight gate.
pub struct Gateway {
    cfg: GatewayConfig,
    gate: InFlightGate,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let gate = InFlightGate::new(cfg.max_in_flight);
        Ok(Self { cfg, gate })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// POSTs the request, returning the first choice's message content.
    /// 429/5xx/transport failures retry with exponential backoff and
    /// jitter up to max_retries; malformed responses fail immediately.
    pub fn chat_complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let body = serde_json::to_vec(req)
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let mut headers = Vec::new();
        if let Some(env_name) = &self.cfg.api_key_env {
            if let Ok(key) = std::env::var(env_name) {
                headers.push(("Authorization".to_string(), format!("Bearer {key}")));
            }
        }
        let timeout = Duration::from_millis(self.cfg.timeout_ms.max(1));
        // Jitter stream seeded per request so backoff is reproducible.
        let mut jitter = Rng::new(derive_seed(
            fnv1a64(&body),
            u64::from(self.cfg.max_retries),
        ));

        let mut last_failure = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = backoff_delay_ms(self.cfg.backoff_ms, attempt, &mut jitter);
                std::thread::sleep(Duration::from_millis(delay));
            }
            let result = {
                let _slot = self.gate.acquire();
                http::post_json(&url, &body, &headers, timeout)
            };
            match result {
                Ok(resp) if resp.status == 200 => {
                    let parsed: ChatResponse = serde_json::from_slice(&resp.body)
                        .map_err(|e| GatewayError::Protocol(format!("bad response JSON: {e}")))?;
                    let content = parsed
                        .choices
                        .first()
                        .and_then(|c| c.message.content.clone())
                        .ok_or_else(|| {
                            GatewayError::Protocol("response has no choices[0].message.content".into())
                        })?;
                    return Ok(content);
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last_failure = format!("HTTP {}", resp.status);
                }
                Ok(resp) => {
                    return Err(GatewayError::Protocol(format!(
                        "HTTP {}: {}",
                        resp.status,
                        String::from_utf8_lossy(&resp.body)
                    )));
                }
                Err(e) => {
                    last_failure = e.to_string();
                }
            }
        }
        Err(GatewayError::Transport(format!(
            "{} after {} attempts: {last_failure}",
            url,
            self.cfg.max_retries + 1
        )))
    }
}

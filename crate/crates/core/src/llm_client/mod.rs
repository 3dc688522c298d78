//! Chat-completion client shared by every judge, translator, teacher and
//! student role, plus the prompt-template registry.

pub mod http;
pub mod mock;
pub mod prompts;

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use prompts::{render, PromptId, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self::new(Role::Tool, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Distinguishes repeated samples of the same prompt (student rollouts).
    #[serde(default)]
    pub sample_index: u32,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            model: "mock".to_string(),
            temperature: 1.0,
            max_tokens: None,
            sample_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> std::result::Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Counting semaphore bounding the number of requests in flight.
#[derive(Debug)]
pub struct InflightLimiter {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(limit: usize) -> Self {
        InflightLimiter {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.limiter.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Run one completion with retries. Transient failures are retried up to
/// `policy.max_retries` times with exponential backoff; fatal ones stop at once.
pub fn complete_with_retry(
    backend: &dyn ChatBackend,
    messages: &[ChatMessage],
    params: &ChatParams,
    policy: &RetryPolicy,
    limiter: &InflightLimiter,
) -> Result<String> {
    let mut attempts = Vec::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            let delay = policy.delay(attempt);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
        }
        let outcome = {
            let _permit = limiter.acquire();
            backend.complete(messages, params)
        };
        match outcome {
            Ok(text) => return Ok(text),
            Err(BackendError::Transient(msg)) => {
                log::warn!("attempt {} failed: {msg}", attempt + 1);
                attempts.push(format!("attempt {}: {msg}", attempt + 1));
            }
            Err(BackendError::Fatal(msg)) => {
                attempts.push(format!("attempt {}: {msg}", attempt + 1));
                return Err(Error::Transport { attempts });
            }
        }
    }
    Err(Error::Transport { attempts })
}

/// A backend bundled with its sampling parameters, retry policy and a
/// (possibly shared) in-flight bound.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    pub params: ChatParams,
    pub retry: RetryPolicy,
    limiter: Arc<InflightLimiter>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("params", &self.params)
            .field("retry", &self.retry)
            .field("inflight", &self.limiter.limit())
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        LlmClient {
            backend,
            params: ChatParams::default(),
            retry: RetryPolicy::default(),
            limiter: Arc::new(InflightLimiter::new(8)),
        }
    }

    pub fn with_params(mut self, params: ChatParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<InflightLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        self.complete_with(messages, &self.params)
    }

    pub fn complete_with(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String> {
        complete_with_retry(self.backend.as_ref(), messages, params, &self.retry, &self.limiter)
    }
}

/// Split off the first non-empty line; returns `(line, rest)` with both trimmed.
pub fn parse_first_line(text: &str) -> Option<(&str, &str)> {
    let text = text.trim_start();
    if text.is_empty() {
        return None;
    }
    match text.split_once('\n') {
        Some((first, rest)) => Some((first.trim(), rest.trim())),
        None => Some((text.trim(), "")),
    }
}

/// Parse a yes/no judgment: the first non-empty line must be `yes` or `no`
/// (any case, optional trailing period).
pub fn parse_yes_no_line(text: &str) -> Result<(bool, String)> {
    let (first, rest) =
        parse_first_line(text).ok_or_else(|| Error::Protocol("empty judgment, expected yes or no".into()))?;
    let word = first.trim_end_matches('.').to_lowercase();
    match word.as_str() {
        "yes" => Ok((true, rest.to_string())),
        "no" => Ok((false, rest.to_string())),
        _ => Err(Error::Protocol(format!(
            "expected yes or no on the first line, got `{first}`"
        ))),
    }
}

/// Strip a surrounding Markdown code fence, if any.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = match rest.find('\n') {
            Some(i) => &rest[i + 1..],
            None => rest,
        };
        return body.trim_end().strip_suffix("```").unwrap_or(body).trim();
    }
    t
}

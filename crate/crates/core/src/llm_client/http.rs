//! OpenAI-compatible chat-completion transport over blocking HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatMessage, ChatParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
    /// JSON pointer to the reply text inside the response body.
    pub content_pointer: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            token_env: "MAGNET_API_KEY".into(),
            timeout_secs: 60,
            content_pointer: "/choices/0/message/content".into(),
        }
    }
}

pub struct HttpChatBackend {
    config: HttpConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    /// Reads the token from the configured environment variable. A missing
    /// variable is allowed for local endpoints without auth.
    pub fn new(config: HttpConfig) -> Result<Self> {
        if config.timeout_secs == 0 {
            return Err(Error::Config("http timeout must be positive".into()));
        }
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!("{} is not set; sending requests without auth", config.token_env);
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpChatBackend { config, token, agent })
    }

    pub fn request_body(messages: &[ChatMessage], params: &ChatParams) -> Value {
        let mut body = json!({
            "model": params.model,
            "messages": messages,
            "temperature": params.temperature,
        });
        if let Some(max) = params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    pub fn extract_content(&self, body: &Value) -> std::result::Result<String, BackendError> {
        body.pointer(&self.config.content_pointer)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal(format!("response has no string at {}", self.config.content_pointer)))
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> std::result::Result<String, BackendError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let resp = req.send_json(Self::request_body(messages, params));
        match resp {
            Ok(mut resp) => {
                let body: Value = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| BackendError::Transient(format!("bad response body: {e}")))?;
                self.extract_content(&body)
            }
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(BackendError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(BackendError::Fatal(format!("HTTP {code}"))),
            Err(e) => Err(BackendError::Transient(e.to_string())),
        }
    }
}

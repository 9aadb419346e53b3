//! Chat-completion HTTP provider.
//!
//! Wire format: `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role", "content"}..], "temperature", "max_tokens"}`;
//! the program is taken from `choices[0].message.content`.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{GenerationError, GenerationRequest, ModelEnsemble, Provider};

pub const API_KEY_ENV: &str = "DISCOVER_API_KEY";
pub const BASE_URL_ENV: &str = "DISCOVER_BASE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatProviderConfig {
    pub base_url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    /// Per-model base URL overrides.
    pub endpoints: BTreeMap<String, String>,
    pub max_concurrent: usize,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub max_attempts: u32,
    pub initial_backoff_s: f64,
    pub backoff_factor: f64,
    pub request_timeout_s: f64,
}

impl Default for ChatProviderConfig {
    fn default() -> Self {
        ChatProviderConfig {
            base_url: "http://localhost:8000/v1".into(),
            api_key: None,
            endpoints: BTreeMap::new(),
            max_concurrent: 4,
            max_output_tokens: 4096,
            temperature: 0.7,
            max_attempts: 5,
            initial_backoff_s: 1.0,
            backoff_factor: 2.0,
            request_timeout_s: 300.0,
        }
    }
}

impl ChatProviderConfig {
    /// `DISCOVER_BASE_URL` and `DISCOVER_API_KEY` win over the file.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_concurrent == 0 {
            return Err(Error::config("provider.max_concurrent", "must be at least 1"));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("provider.max_attempts", "must be at least 1"));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::config("provider.max_output_tokens", "must be at least 1"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::config("provider.temperature", "must be >= 0"));
        }
        if !(self.initial_backoff_s >= 0.0 && self.backoff_factor >= 1.0) {
            return Err(Error::config("provider.initial_backoff_s", "backoff must be non-negative and non-shrinking"));
        }
        if !self.request_timeout_s.is_finite() || self.request_timeout_s <= 0.0 {
            return Err(Error::config("provider.request_timeout_s", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn from_generation(request: &GenerationRequest) -> Self {
        ChatRequest {
            model: request.model_id.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: request.prompt.task_prompt.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: request.prompt.render_user_message(),
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct ChatProvider {
    config: ChatProviderConfig,
    endpoints: BTreeMap<String, String>,
    client: reqwest::blocking::Client,
    slots: Slots,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(GenerationError),
}

impl ChatProvider {
    pub fn new(config: ChatProviderConfig, ensemble: &ModelEnsemble) -> Result<Self> {
        config.validate()?;
        // fails only if a process-wide provider is already installed
        let _ = rustls::crypto::ring::default_provider().install_default();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_s))
            .build()
            .map_err(|e| Error::Startup(format!("http client: {e}")))?;
        let endpoints = ensemble
            .entries()
            .iter()
            .filter_map(|e| e.endpoint.clone().map(|url| (e.model_id.clone(), url)))
            .collect();
        Ok(ChatProvider {
            slots: Slots {
                free: Mutex::new(config.max_concurrent),
                cv: Condvar::new(),
            },
            config,
            endpoints,
            client,
        })
    }

    fn url_for(&self, model: &str) -> String {
        let base = self.endpoints.get(model).unwrap_or(&self.config.base_url);
        format!("{}/chat/completions", base.trim_end_matches('/'))
    }

    fn attempt(&self, url: &str, body: &ChatRequest) -> Attempt {
        let _slot = self.slots.acquire();
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("request failed: {e}")),
        };
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("server answered {status}"));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Fatal(GenerationError::Rejected(format!("{status}: {text}")));
        }
        let reply: ChatReply = match resp.json() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("unreadable reply: {e}")),
        };
        let content = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        match extract_code(&content) {
            Some(code) => Attempt::Done(code),
            None => Attempt::Fatal(GenerationError::Empty),
        }
    }
}

impl Provider for ChatProvider {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenerationError> {
        let url = self.url_for(&request.model_id);
        let body = ChatRequest::from_generation(request);
        let mut backoff = self.config.initial_backoff_s;
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(&url, &body) {
                Attempt::Done(code) => return Ok(code),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(why) => {
                    tracing::warn!(model = %request.model_id, attempt, "transient failure: {why}");
                    last = why;
                }
            }
            if attempt < self.config.max_attempts {
                std::thread::sleep(Duration::from_secs_f64(backoff));
                backoff *= self.config.backoff_factor;
            }
        }
        Err(GenerationError::Exhausted {
            attempts: self.config.max_attempts,
            message: last,
        })
    }
}

/// Contents of the first fenced code block, else the whole reply.
/// `None` if the result is blank.
pub fn extract_code(reply: &str) -> Option<String> {
    let code = match reply.find("```") {
        Some(open) => {
            let after = &reply[open + 3..];
            // skip the info string (language tag) up to the end of the line
            let body = after.find('\n').map_or("", |nl| &after[nl + 1..]);
            match body.find("```") {
                Some(close) => &body[..close],
                None => body,
            }
        }
        None => reply,
    };
    let trimmed = code.trim_matches(|c| c == '\n' || c == '\r');
    (!trimmed.trim().is_empty()).then(|| format!("{}\n", trimmed.trim_end()))
}

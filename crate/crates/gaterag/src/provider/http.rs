//! OpenAI-compatible chat-completions client with exponential-backoff retry
//! on transient failures (429 and 5xx).

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, TokenUsage};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Total attempts including the first (so 4 allows 3 retries).
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        HttpChatConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-5-nano".into(),
            api_key_env: "GATERAG_API_KEY".into(),
            max_attempts: 4,
            initial_backoff_ms: 200,
            timeout_secs: 60,
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

pub struct HttpChat {
    config: HttpChatConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    calls: AtomicU64,
}

impl HttpChat {
    pub fn new(config: HttpChatConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| ProviderError::Auth(format!("{} is not set", config.api_key_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(HttpChat {
            config,
            api_key,
            client,
            calls: AtomicU64::new(0),
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, AttemptError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let body = WireRequest {
            model: &self.config.model,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: &request.system,
                },
                WireMessage {
                    role: "user",
                    content: &request.user,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| AttemptError::Transient(ProviderError::Transport(e.to_string())))?;

        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(ProviderError::Auth(format!(
                "endpoint returned {status}"
            ))));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(ProviderError::Transport(format!(
                "status {status}"
            ))));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(ProviderError::MalformedResponse(
                format!("unexpected status {status}"),
            )));
        }
        let text = response
            .text()
            .map_err(|e| AttemptError::Transient(ProviderError::Transport(e.to_string())))?;
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(ProviderError::MalformedResponse(e.to_string())))?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| {
            AttemptError::Fatal(ProviderError::MalformedResponse("no choices".into()))
        })?;
        let content = choice.message.content.ok_or_else(|| {
            AttemptError::Fatal(ProviderError::MalformedResponse("null content".into()))
        })?;
        let usage = wire.usage.map(|u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(ChatResponse {
            text: content,
            usage: usage.unwrap_or_default(),
        })
    }
}

enum AttemptError {
    Transient(ProviderError),
    Fatal(ProviderError),
}

impl ChatProvider for HttpChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last: Option<ProviderError> = None;
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(e)) => {
                    log::warn!("chat attempt {attempt} failed: {e}");
                    last = Some(e);
                    if attempt < self.config.max_attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        match last {
            Some(ProviderError::Transport(msg)) if msg.contains("429") => {
                Err(ProviderError::RateLimited {
                    attempts: self.config.max_attempts,
                })
            }
            Some(e) => Err(e),
            None => Err(ProviderError::Transport("no attempts made".into())),
        }
    }

    fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

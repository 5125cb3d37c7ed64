//! Scripted chat provider for offline, deterministic testing.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, TokenUsage};

/// One scripted rule: fires when every `contains` fragment occurs in the
/// concatenated system+user prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub response: String,
}

impl MockRule {
    pub fn new(fragments: &[&str], response: &str) -> Self {
        MockRule {
            contains: fragments.iter().map(|s| s.to_string()).collect(),
            response: response.to_string(),
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|frag| prompt.contains(frag))
    }
}

/// Ordered-rule mock: the first matching rule fires. Unmatched prompts either
/// return the configured default or error in strict mode.
pub struct MockChat {
    rules: Vec<MockRule>,
    default_response: Option<String>,
    calls: AtomicU64,
}

impl MockChat {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockChat {
            rules,
            default_response: None,
            calls: AtomicU64::new(0),
        }
    }

    /// Strict mock with no rules at all; every call errors.
    pub fn strict() -> Self {
        MockChat::new(Vec::new())
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    /// Total chat calls served, for instrumentation in tests.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ChatProvider for MockChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let prompt = format!("{}\n{}", request.system, request.user);
        for rule in &self.rules {
            if rule.matches(&prompt) {
                return Ok(ChatResponse {
                    text: rule.response.clone(),
                    usage: TokenUsage {
                        prompt_tokens: (prompt.len() / 4) as u32,
                        completion_tokens: (rule.response.len() / 4) as u32,
                    },
                });
            }
        }
        match &self.default_response {
            Some(text) => Ok(ChatResponse::text(text.clone())),
            None => Err(ProviderError::NoMockMatch {
                prompt_head: prompt.chars().take(80).collect(),
            }),
        }
    }
}

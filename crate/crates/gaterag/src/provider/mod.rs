//! Model providers: chat LLMs and embeddings behind deterministic-testable
//! traits. Every pipeline stage takes `&dyn ChatProvider` / `&dyn
//! EmbeddingProvider`, so the whole test suite runs on mocks and transcripts.

mod hash_embed;
mod http;
mod mock;
mod transcript;

pub use hash_embed::HashEmbedder;
pub use http::{HttpChat, HttpChatConfig};
pub use mock::{MockChat, MockRule};
pub use transcript::{RecordingChat, ReplayChat, Transcript, TranscriptEntry};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no mock rule matches prompt (strict mode): {prompt_head}")]
    NoMockMatch { prompt_head: String },
    #[error("no transcript entry for request hash {0}")]
    TranscriptMiss(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("transcript io: {0}")]
    Io(#[from] std::io::Error),
}

/// One chat-completion request. Pipeline calls always use temperature 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    /// SHA-256 of the canonical JSON form (object keys sorted), so the hash
    /// survives field reordering.
    pub fn canonical_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("request serialization cannot fail");
        let canonical = serde_json::to_string(&value).expect("canonical form cannot fail");
        hex_digest(canonical.as_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            usage: TokenUsage::default(),
        }
    }
}

/// A chat LLM endpoint. Implementations must be safe for concurrent calls.
pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// Number of network round trips issued so far. Mocks and replays stay 0.
    fn network_calls(&self) -> u64 {
        0
    }
}

/// A text embedder producing unit-norm vectors of a fixed dimension.
/// Identical texts must map to identical vectors within one instance.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        Ok(self.embed(&[text])?.remove(0))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(digest.len() * 2);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_hash_is_stable_and_field_order_free() {
        let req = ChatRequest::new("sys", "user text");
        let h1 = req.canonical_hash();
        let h2 = req.canonical_hash();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        // A hash computed from a reordered JSON encoding matches.
        let reordered: ChatRequest = serde_json::from_str(
            r#"{"max_tokens":1024,"user":"user text","temperature":0.0,"system":"sys"}"#,
        )
        .unwrap();
        assert_eq!(reordered.canonical_hash(), h1);
    }

    #[test]
    fn different_prompts_hash_differently() {
        let a = ChatRequest::new("sys", "one");
        let b = ChatRequest::new("sys", "two");
        assert_ne!(a.canonical_hash(), b.canonical_hash());
    }
}

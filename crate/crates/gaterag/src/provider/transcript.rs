//! Transcript recording and replay. A transcript is a JSON-lines file of
//! request-hash/response pairs; replaying it reproduces a pipeline run
//! byte for byte without touching any model.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub response: ChatResponse,
}

/// In-memory transcript keyed by canonical request hash.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: BTreeMap<String, ChatResponse>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    pub fn insert(&mut self, hash: String, response: ChatResponse) {
        self.entries.insert(hash, response);
    }

    pub fn get(&self, hash: &str) -> Option<&ChatResponse> {
        self.entries.get(hash)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes one JSON line per entry, sorted by hash for stable files.
    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let mut body = String::new();
        for (hash, response) in &self.entries {
            let entry = TranscriptEntry {
                hash: hash.clone(),
                response: response.clone(),
            };
            body.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
            body.push('\n');
        }
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = fs::read_to_string(path)?;
        let mut transcript = Transcript::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let entry: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::MalformedResponse(format!("transcript line: {e}")))?;
            transcript.insert(entry.hash, entry.response);
        }
        Ok(transcript)
    }
}

/// Wraps a live provider and records every request/response pair.
pub struct RecordingChat<P> {
    inner: P,
    transcript: Mutex<Transcript>,
}

impl<P: ChatProvider> RecordingChat<P> {
    pub fn new(inner: P) -> Self {
        RecordingChat {
            inner,
            transcript: Mutex::new(Transcript::new()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        self.transcript.lock().expect("transcript lock").save(path)
    }
}

impl<P: ChatProvider> ChatProvider for RecordingChat<P> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.chat(request)?;
        self.transcript
            .lock()
            .expect("transcript lock")
            .insert(request.canonical_hash(), response.clone());
        Ok(response)
    }

    fn network_calls(&self) -> u64 {
        self.inner.network_calls()
    }
}

/// Serves responses from a transcript; any unseen request is an error, so a
/// replay can never silently reach a model.
pub struct ReplayChat {
    transcript: Transcript,
}

impl ReplayChat {
    pub fn new(transcript: Transcript) -> Self {
        ReplayChat { transcript }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Ok(ReplayChat::new(Transcript::load(path)?))
    }
}

impl ChatProvider for ReplayChat {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let hash = request.canonical_hash();
        self.transcript
            .get(&hash)
            .cloned()
            .ok_or(ProviderError::TranscriptMiss(hash))
    }
}

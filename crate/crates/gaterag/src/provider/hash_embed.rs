//! Deterministic bag-of-words hashing embedder: a stand-in for a sentence
//! encoder that keeps tests fully offline. Token counts are hashed into a
//! fixed number of buckets and the vector is L2-normalized, so identical
//! texts map to identical vectors and shared tokens raise cosine similarity.

use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, ProviderError};
use crate::graph::normalize;

pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashEmbedder { dimension }
    }

    /// Bucket index for a token. SHA-256 based so the mapping is stable
    /// across processes and platforms.
    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut value = 0u64;
        for &b in digest.iter().take(8) {
            value = (value << 8) | b as u64;
        }
        (value % self.dimension as u64) as usize
    }
}

pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                return Err(ProviderError::EmptyText);
            }
            let mut v = vec![0.0f32; self.dimension];
            for token in &tokens {
                v[self.bucket(token)] += 1.0;
            }
            normalize(&mut v);
            out.push(v);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::cosine;

    #[test]
    fn identical_texts_embed_identically() {
        let embedder = HashEmbedder::new(64);
        let a = embedder.embed_one("alpha beta").unwrap();
        let b = embedder.embed_one("alpha beta").unwrap();
        assert_eq!(a, b);
        assert!((crate::graph::l2_norm(&a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_rejected() {
        let embedder = HashEmbedder::new(64);
        assert!(matches!(
            embedder.embed_one("  ... "),
            Err(ProviderError::EmptyText)
        ));
    }

    /// Finds tokens that land in distinct buckets so orthogonality is exact.
    fn collision_free_vocab(embedder: &HashEmbedder, n: usize) -> Vec<String> {
        let mut vocab = Vec::new();
        let mut used = std::collections::BTreeSet::new();
        let mut i = 0;
        while vocab.len() < n {
            let token = format!("tok{i}");
            let b = embedder.bucket(&token);
            if used.insert(b) {
                vocab.push(token);
            }
            i += 1;
        }
        vocab
    }

    #[test]
    fn disjoint_token_texts_are_orthogonal() {
        let embedder = HashEmbedder::new(64);
        let vocab = collision_free_vocab(&embedder, 6);
        let a = embedder.embed_one(&vocab[..3].join(" ")).unwrap();
        let b = embedder.embed_one(&vocab[3..].join(" ")).unwrap();
        assert!(cosine(&a, &b).abs() < 1e-12);
    }

    #[test]
    fn shared_tokens_raise_cosine() {
        let embedder = HashEmbedder::new(64);
        let v = collision_free_vocab(&embedder, 6);
        // "a b c" vs "a b d" share two tokens; "a b c" vs "x y z" share none.
        let abc = embedder.embed_one(&format!("{} {} {}", v[0], v[1], v[2])).unwrap();
        let abd = embedder.embed_one(&format!("{} {} {}", v[0], v[1], v[3])).unwrap();
        let xyz = embedder.embed_one(&format!("{} {} {}", v[4], v[5], v[3])).unwrap();
        let near = cosine(&abc, &abd);
        let far = cosine(&abc, &xyz);
        assert!((near - 2.0 / 3.0).abs() < 1e-9, "near {near}");
        assert!(near > far, "{near} vs {far}");
    }
}

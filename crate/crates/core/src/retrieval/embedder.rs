//! Pluggable text embedders for stage-1 retrieval.
//!
//! The hashing embedder is fully deterministic (FNV-1a over token unigrams
//! and bigrams) and needs no model weights, which keeps retrieval usable
//! offline and in tests. A remote embedder covers deployments with a real
//! embedding endpoint.

use std::time::Duration;

use serde::Deserialize;

use super::RetrievalError;

pub trait Embedder: Send + Sync {
    /// Identifier stored in the index; a query embedder must match it.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    /// Returns a unit-normalized vector of `dimension()` components.
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError>;
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Deterministic bag-of-features embedder: hashed token unigrams and
/// bigrams with signed buckets, L2-normalized.
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2, "embedding dimension must be >= 2");
        Self { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-v1-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        let mut vector = vec![0.0f32; self.dimension];
        let tokens: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect();
        let mut bump = |feature: &str| {
            let hash = fnv1a(feature.as_bytes());
            let bucket = (hash % self.dimension as u64) as usize;
            let sign = if (hash >> 63) == 0 { 1.0 } else { -1.0 };
            vector[bucket] += sign;
        };
        for token in &tokens {
            bump(token);
        }
        for pair in tokens.windows(2) {
            bump(&format!("{} {}", pair[0], pair[1]));
        }
        let norm: f32 = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        Ok(vector)
    }
}

/// OpenAI-style `/embeddings` endpoint client.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    model: String,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn from_env(
        base_url: Option<String>,
        key_var: &str,
        model: impl Into<String>,
        dimension: usize,
    ) -> Result<Self, RetrievalError> {
        let api_key = std::env::var(key_var).map_err(|_| {
            RetrievalError::Embedder(format!("environment variable {key_var} is not set"))
        })?;
        let base_url = base_url
            .or_else(|| std::env::var("LLM_BASE_URL").ok())
            .unwrap_or_else(|| "https://api.openai.com/v1".to_string());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RetrievalError::Embedder(e.to_string()))?;
        Ok(Self { client, base_url, api_key, model: model.into(), dimension })
    }
}

#[derive(Deserialize)]
struct EmbeddingData {
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingData>,
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote-{}-{}", self.model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        let response = self
            .client
            .post(format!("{}/embeddings", self.base_url.trim_end_matches('/')))
            .bearer_auth(&self.api_key)
            .json(&serde_json::json!({"model": self.model, "input": text}))
            .send()
            .map_err(|e| RetrievalError::Embedder(e.to_string()))?;
        if !response.status().is_success() {
            return Err(RetrievalError::Embedder(format!(
                "embedding endpoint returned {}",
                response.status()
            )));
        }
        let parsed: EmbeddingResponse = response
            .json()
            .map_err(|e| RetrievalError::Embedder(e.to_string()))?;
        let mut vector = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| RetrievalError::Embedder("empty embedding response".to_string()))?;
        if vector.len() != self.dimension {
            return Err(RetrievalError::Embedder(format!(
                "embedding dimension {} != configured {}",
                vector.len(),
                self.dimension
            )));
        }
        let norm: f32 = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        Ok(vector)
    }
}

//! Dual-stage dataset retrieval: embedding top-k over card descriptions,
//! then LLM reranking with self-consistency voting.

pub mod embedder;
mod rerank;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DatasetCard, TaskSpec};
pub use embedder::{Embedder, HashEmbedder, RemoteEmbedder};
pub use rerank::{
    canonicalize_answer, rerank_once, rerank_with_self_consistency, tally_votes, RerankOptions,
    RerankResult, RerankVote,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedder: {0}")]
    Embedder(String),
    #[error("duplicate dataset name: {0}")]
    DuplicateName(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("no cards could be embedded")]
    AllCardsSkipped,
    #[error("index was built with embedder {index} but query uses {query}")]
    EmbedderMismatch { index: String, query: String },
    #[error(transparent)]
    Gateway(#[from] crate::llm::GatewayError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad index file: {0}")]
    BadIndexFile(String),
}

/// One indexed dataset: name, a digest of the embedded text, and its
/// unit-normalized vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub digest: String,
    pub vector: Vec<f32>,
}

/// Embedding index over dataset cards, persistable as plain JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub entries: Vec<IndexEntry>,
    pub dimension: usize,
    pub embedder_id: String,
}

impl EmbeddingIndex {
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let json = serde_json::to_string(self)
            .map_err(|e| RetrievalError::BadIndexFile(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)?;
        let index: EmbeddingIndex = serde_json::from_str(&text)
            .map_err(|e| RetrievalError::BadIndexFile(format!("{}: {e}", path.display())))?;
        for entry in &index.entries {
            if entry.vector.len() != index.dimension {
                return Err(RetrievalError::BadIndexFile(format!(
                    "entry {} has dimension {} != {}",
                    entry.name,
                    entry.vector.len(),
                    index.dimension
                )));
            }
        }
        Ok(index)
    }
}

/// A ranked retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    pub name: String,
    pub score: f32,
}

fn embedding_text(card: &DatasetCard) -> String {
    let tags = card.tags.join(" ");
    if card.description.trim().is_empty() {
        tags
    } else {
        format!("{} {}", card.description, tags)
    }
}

fn normalize(vector: &mut [f32]) {
    let norm: f32 = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        for v in vector.iter_mut() {
            *v /= norm;
        }
    }
}

/// Embed every card (description plus tags) into one index entry each.
/// Cards whose embedding fails are skipped with a warning; duplicates are
/// an error.
pub fn build_index(
    cards: &[DatasetCard],
    embedder: &dyn Embedder,
) -> Result<EmbeddingIndex, RetrievalError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut entries = Vec::with_capacity(cards.len());
    for card in cards {
        if !seen.insert(card.name.clone()) {
            return Err(RetrievalError::DuplicateName(card.name.clone()));
        }
        if !card.has_description() {
            tracing::warn!(dataset = %card.name, "embedding from tags only: empty description");
        }
        let text = embedding_text(card);
        match embedder.embed(&text) {
            Ok(mut vector) => {
                normalize(&mut vector);
                use sha2::{Digest, Sha256};
                let mut hasher = Sha256::new();
                hasher.update(text.as_bytes());
                entries.push(IndexEntry {
                    name: card.name.clone(),
                    digest: format!("{:x}", hasher.finalize()),
                    vector,
                });
            }
            Err(e) => {
                tracing::warn!(dataset = %card.name, error = %e, "skipping card: embedding failed");
            }
        }
    }
    if entries.is_empty() {
        return Err(RetrievalError::AllCardsSkipped);
    }
    Ok(EmbeddingIndex {
        dimension: embedder.dimension(),
        embedder_id: embedder.id(),
        entries,
    })
}

/// Rank datasets by cosine similarity of the embedded task instruction,
/// descending, ties broken by name so re-runs are identical. Returns at
/// most `k` hits.
pub fn retrieve_top_k(
    index: &EmbeddingIndex,
    embedder: &dyn Embedder,
    task: &TaskSpec,
    k: usize,
) -> Result<Vec<ScoredDataset>, RetrievalError> {
    if index.entries.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if index.embedder_id != embedder.id() {
        return Err(RetrievalError::EmbedderMismatch {
            index: index.embedder_id.clone(),
            query: embedder.id(),
        });
    }
    let query = embedder.embed(&task.instruction)?;
    let mut scored: Vec<ScoredDataset> = index
        .entries
        .iter()
        .map(|entry| ScoredDataset {
            name: entry.name.clone(),
            score: entry.vector.iter().zip(&query).map(|(a, b)| a * b).sum(),
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    scored.truncate(k);
    Ok(scored)
}

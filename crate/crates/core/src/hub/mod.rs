//! Dataset ingestion from a remote hub or a local corpus directory.
//!
//! Local layout: `<dir>/<dataset>/card.json`,
//! `<dir>/<dataset>/<config>/schema.json`, `<dir>/<dataset>/<config>/rows.jsonl`.
//! The local backend is what tests and offline runs use; the remote backend
//! speaks the public hub's metadata and rows APIs and caches responses on
//! disk with a TTL. Both normalize every row value to text on the way in.

mod local;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DataRow, DatasetCard, DatasetSchema};

pub use local::LocalCorpus;
pub use remote::RemoteHub;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("dataset {0} has no rows")]
    EmptyDataset(String),
    #[error("auth: {0}")]
    Auth(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid corpus data: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} is not supported by this corpus source")]
    Unsupported(String),
}

/// Where datasets come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSource {
    pub kind: CorpusKind,
    /// Directory path for `local_dir`, base URL for `remote_hub`.
    pub location: String,
    /// Name of the environment variable holding the hub token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    RemoteHub,
    LocalDir,
}

impl CorpusSource {
    pub fn local(dir: impl Into<String>) -> Self {
        Self { kind: CorpusKind::LocalDir, location: dir.into(), auth: None }
    }

    pub fn remote(base_url: impl Into<String>) -> Self {
        Self { kind: CorpusKind::RemoteHub, location: base_url.into(), auth: None }
    }
}

/// One page of rows from a streaming fetch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowPage {
    pub rows: Vec<DataRow>,
    /// Opaque resume cursor; absent on the final page.
    pub next_cursor: Option<String>,
    pub total_estimate: Option<u64>,
}

/// A dataset backend. All methods are read-only and safe to call
/// concurrently.
pub trait HubBackend: Send + Sync {
    fn fetch_card(&self, name: &str) -> Result<DatasetCard, HubError>;

    /// Names of all datasets in the corpus, sorted.
    fn list_datasets(&self) -> Result<Vec<String>, HubError>;

    fn fetch_schema_and_samples(
        &self,
        name: &str,
        config: &str,
        split: &str,
        sample_n: usize,
    ) -> Result<(DatasetSchema, Vec<DataRow>), HubError>;

    /// Fetch up to `limit` rows starting at `start`, one page at a time.
    /// Row order and `source_index` are deterministic for a fixed source.
    fn fetch_rows(
        &self,
        name: &str,
        config: &str,
        split: &str,
        start: u64,
        limit: u64,
    ) -> Result<Vec<RowPage>, HubError>;
}

/// Front door dispatching to the configured backend.
pub struct HubClient {
    backend: Box<dyn HubBackend>,
}

impl HubClient {
    pub fn open(source: &CorpusSource) -> Result<Self, HubError> {
        let backend: Box<dyn HubBackend> = match source.kind {
            CorpusKind::LocalDir => Box::new(LocalCorpus::open(&source.location)?),
            CorpusKind::RemoteHub => Box::new(RemoteHub::new(source)?),
        };
        Ok(Self { backend })
    }

    pub fn fetch_card(&self, name: &str) -> Result<DatasetCard, HubError> {
        let card = self.backend.fetch_card(name)?;
        if !card.has_description() {
            tracing::warn!(dataset = %card.name, "dataset card has an empty description");
        }
        Ok(card)
    }

    pub fn list_datasets(&self) -> Result<Vec<String>, HubError> {
        self.backend.list_datasets()
    }

    pub fn fetch_schema_and_samples(
        &self,
        name: &str,
        config: &str,
        split: &str,
        sample_n: usize,
    ) -> Result<(DatasetSchema, Vec<DataRow>), HubError> {
        let (schema, rows) = self
            .backend
            .fetch_schema_and_samples(name, config, split, sample_n)?;
        schema
            .validate()
            .map_err(|e| HubError::Invalid(format!("{name}/{config}: {e}")))?;
        for row in &rows {
            row.validate_against(&schema)
                .map_err(|e| HubError::Invalid(format!("{name}/{config}: {e}")))?;
        }
        Ok((schema, rows))
    }

    /// Stream rows as pages; concatenating all pages equals one fetch of
    /// the same range.
    pub fn stream_rows(
        &self,
        name: &str,
        config: &str,
        split: &str,
        start: u64,
        limit: u64,
    ) -> Result<Vec<RowPage>, HubError> {
        self.backend.fetch_rows(name, config, split, start, limit)
    }

    /// All rows of a range, pages flattened.
    pub fn fetch_rows_flat(
        &self,
        name: &str,
        config: &str,
        split: &str,
        start: u64,
        limit: u64,
    ) -> Result<Vec<DataRow>, HubError> {
        Ok(self
            .stream_rows(name, config, split, start, limit)?
            .into_iter()
            .flat_map(|p| p.rows)
            .collect())
    }
}

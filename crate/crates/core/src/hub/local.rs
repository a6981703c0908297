//! Local corpus directory backend.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::types::{normalize_value, DataRow, DatasetCard, DatasetSchema};

use super::{HubBackend, HubError, RowPage};

const PAGE_SIZE: usize = 100;

pub struct LocalCorpus {
    root: PathBuf,
}

impl LocalCorpus {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, HubError> {
        let root = dir.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(HubError::NotFound(format!(
                "corpus directory {}",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    fn rows_path(&self, name: &str, config: &str) -> Result<PathBuf, HubError> {
        let path = self.root.join(name).join(config).join("rows.jsonl");
        if !path.is_file() {
            return Err(HubError::NotFound(format!("{name}/{config}/rows.jsonl")));
        }
        Ok(path)
    }

    fn read_schema(&self, name: &str, config: &str) -> Result<DatasetSchema, HubError> {
        let path = self.root.join(name).join(config).join("schema.json");
        if !path.is_file() {
            return Err(HubError::NotFound(format!("{name}/{config}/schema.json")));
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| HubError::Invalid(format!("{}: {e}", path.display())))
    }
}

fn parse_row_line(line: &str, source_index: u64, path: &Path) -> Result<DataRow, HubError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
        HubError::Invalid(format!("{} line {}: {e}", path.display(), source_index + 1))
    })?;
    let serde_json::Value::Object(object) = value else {
        return Err(HubError::Invalid(format!(
            "{} line {}: row is not a JSON object",
            path.display(),
            source_index + 1
        )));
    };
    let values = object
        .iter()
        .map(|(k, v)| (k.clone(), normalize_value(v)))
        .collect();
    Ok(DataRow { values, source_index })
}

impl HubBackend for LocalCorpus {
    fn fetch_card(&self, name: &str) -> Result<DatasetCard, HubError> {
        let path = self.root.join(name).join("card.json");
        if !path.is_file() {
            return Err(HubError::NotFound(format!("dataset {name}")));
        }
        let text = std::fs::read_to_string(&path)?;
        let card: DatasetCard = serde_json::from_str(&text)
            .map_err(|e| HubError::Invalid(format!("{}: {e}", path.display())))?;
        Ok(card)
    }

    fn list_datasets(&self) -> Result<Vec<String>, HubError> {
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().is_dir() && entry.path().join("card.json").is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        Ok(names)
    }

    fn fetch_schema_and_samples(
        &self,
        name: &str,
        config: &str,
        _split: &str,
        sample_n: usize,
    ) -> Result<(DatasetSchema, Vec<DataRow>), HubError> {
        let schema = self.read_schema(name, config)?;
        let path = self.rows_path(name, config)?;
        let reader = BufReader::new(std::fs::File::open(&path)?);
        let mut rows = Vec::with_capacity(sample_n);
        for (i, line) in reader.lines().enumerate() {
            if rows.len() >= sample_n {
                break;
            }
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(parse_row_line(&line, i as u64, &path)?);
        }
        if rows.is_empty() {
            return Err(HubError::EmptyDataset(format!("{name}/{config}")));
        }
        Ok((schema, rows))
    }

    fn fetch_rows(
        &self,
        name: &str,
        config: &str,
        _split: &str,
        start: u64,
        limit: u64,
    ) -> Result<Vec<RowPage>, HubError> {
        let path = self.rows_path(name, config)?;
        let reader = BufReader::new(std::fs::File::open(&path)?);
        let mut pages = Vec::new();
        let mut current: Vec<DataRow> = Vec::new();
        let mut delivered = 0u64;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let index = i as u64;
            if index < start {
                continue;
            }
            if delivered >= limit {
                break;
            }
            current.push(parse_row_line(&line, index, &path)?);
            delivered += 1;
            if current.len() == PAGE_SIZE {
                let cursor = (index + 1).to_string();
                pages.push(RowPage {
                    rows: std::mem::take(&mut current),
                    next_cursor: Some(cursor),
                    total_estimate: None,
                });
            }
        }
        if !current.is_empty() || pages.is_empty() {
            pages.push(RowPage { rows: current, next_cursor: None, total_estimate: None });
        } else if let Some(last) = pages.last_mut() {
            // Limit or EOF landed exactly on a page boundary.
            last.next_cursor = None;
        }
        Ok(pages)
    }
}

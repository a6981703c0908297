//! Remote hub backend speaking the public dataset hub's REST APIs.
//!
//! Card metadata comes from `GET {base}/api/datasets/{name}`; rows come from
//! the rows server (`GET {rows_base}/rows?dataset=..&config=..&split=..`),
//! which for the public hub lives on a separate host. Responses are cached
//! on disk with a TTL so repeated runs stay cheap and stable.

use std::path::PathBuf;
use std::time::Duration;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::types::{normalize_value, Column, DataRow, DatasetCard, DatasetSchema, ValueKind};

use super::{CorpusSource, HubBackend, HubError, RowPage};

const ROWS_PAGE: u64 = 100;
const PAGE_RETRIES: u32 = 3;
const CACHE_TTL: Duration = Duration::from_secs(24 * 3600);

/// Rows, total-count estimate and column descriptors from one rows-API page.
type ParsedRowsPage = (Vec<DataRow>, Option<u64>, Vec<Column>);

pub struct RemoteHub {
    client: reqwest::blocking::Client,
    base_url: String,
    rows_base_url: String,
    token: Option<String>,
    cache_dir: Option<PathBuf>,
}

impl RemoteHub {
    pub fn new(source: &CorpusSource) -> Result<Self, HubError> {
        let base_url = source.location.trim_end_matches('/').to_string();
        if base_url.is_empty() {
            return Err(HubError::Invalid("remote hub base URL is empty".to_string()));
        }
        let rows_base_url = std::env::var("HUB_ROWS_BASE_URL")
            .ok()
            .map(|u| u.trim_end_matches('/').to_string())
            .unwrap_or_else(|| {
                if base_url.contains("huggingface.co") {
                    "https://datasets-server.huggingface.co".to_string()
                } else {
                    base_url.clone()
                }
            });
        let token = match &source.auth {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                HubError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| HubError::Transport(e.to_string()))?;
        let cache_dir = std::env::var("HUB_CACHE_DIR").ok().map(PathBuf::from);
        Ok(Self { client, base_url, rows_base_url, token, cache_dir })
    }

    fn cached_get(&self, url: &str) -> Result<String, HubError> {
        let cache_path = self.cache_dir.as_ref().map(|dir| {
            let mut hasher = Sha256::new();
            hasher.update(url.as_bytes());
            dir.join(format!("{:x}.json", hasher.finalize()))
        });
        if let Some(path) = &cache_path {
            if let Ok(meta) = std::fs::metadata(path) {
                let fresh = meta
                    .modified()
                    .ok()
                    .and_then(|m| m.elapsed().ok())
                    .map(|age| age < CACHE_TTL)
                    .unwrap_or(false);
                if fresh {
                    if let Ok(text) = std::fs::read_to_string(path) {
                        return Ok(text);
                    }
                }
            }
        }

        let mut request = self.client.get(url);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| HubError::Transport(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 404 {
            return Err(HubError::NotFound(url.to_string()));
        }
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(HubError::Auth(format!("{status} for {url}")));
        }
        if !status.is_success() {
            return Err(HubError::Transport(format!("{status} for {url}")));
        }
        let text = response.text().map_err(|e| HubError::Transport(e.to_string()))?;
        if let Some(path) = &cache_path {
            if let Some(parent) = path.parent() {
                let _ = std::fs::create_dir_all(parent);
            }
            let _ = std::fs::write(path, &text);
        }
        Ok(text)
    }

    /// One rows-API page, with transient failures retried so a mid-stream
    /// blip does not abort a long fetch. Errors carry the failing offset;
    /// callers resume with `start = offset`.
    fn fetch_rows_page(
        &self,
        name: &str,
        config: &str,
        split: &str,
        offset: u64,
        length: u64,
    ) -> Result<ParsedRowsPage, HubError> {
        let url = format!(
            "{}/rows?dataset={}&config={}&split={}&offset={}&length={}",
            self.rows_base_url,
            urlencode(name),
            urlencode(config),
            urlencode(split),
            offset,
            length
        );
        let mut attempt = 0;
        let text = loop {
            match self.cached_get(&url) {
                Ok(text) => break text,
                Err(HubError::Transport(e)) if attempt < PAGE_RETRIES => {
                    attempt += 1;
                    tracing::warn!(url = %url, attempt, error = %e, "retrying rows page");
                    std::thread::sleep(Duration::from_millis(250 * attempt as u64));
                }
                Err(HubError::Transport(e)) => {
                    return Err(HubError::Transport(format!(
                        "rows page at offset {offset} failed after {attempt} retries: {e}"
                    )))
                }
                Err(other) => return Err(other),
            }
        };
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| HubError::Invalid(format!("rows response: {e}")))?;
        parse_rows_response(&value, offset)
    }
}

fn urlencode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' | b'/' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Map a hub feature descriptor to our coarse value kinds.
fn feature_kind(feature_type: &Value) -> ValueKind {
    match feature_type {
        Value::Object(map) => {
            if let Some(Value::String(t)) = map.get("_type") {
                match t.as_str() {
                    "Value" => match map.get("dtype").and_then(Value::as_str).unwrap_or("") {
                        "string" | "large_string" => ValueKind::Text,
                        d if d.starts_with("int")
                            || d.starts_with("uint")
                            || d.starts_with("float")
                            || d == "double" =>
                        {
                            ValueKind::Number
                        }
                        "bool" => ValueKind::Boolean,
                        _ => ValueKind::Other,
                    },
                    "Sequence" | "LargeList" | "List" => ValueKind::List,
                    "ClassLabel" => ValueKind::Number,
                    _ => ValueKind::Nested,
                }
            } else {
                ValueKind::Nested
            }
        }
        Value::Array(_) => ValueKind::List,
        _ => ValueKind::Other,
    }
}

pub(crate) fn parse_card_response(name: &str, value: &Value) -> DatasetCard {
    let description = value
        .get("description")
        .and_then(Value::as_str)
        .or_else(|| {
            value
                .get("cardData")
                .and_then(|c| c.get("description"))
                .and_then(Value::as_str)
        })
        .unwrap_or("")
        .to_string();
    let tags = value
        .get("tags")
        .and_then(Value::as_array)
        .map(|tags| {
            tags.iter()
                .filter_map(Value::as_str)
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let configs = value
        .get("cardData")
        .and_then(|c| c.get("configs"))
        .and_then(Value::as_array)
        .map(|configs| {
            configs
                .iter()
                .filter_map(|c| c.get("config_name").and_then(Value::as_str))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_else(|| vec!["default".to_string()]);
    DatasetCard { name: name.to_string(), configs, description, tags }
}

pub(crate) fn parse_rows_response(
    value: &Value,
    offset: u64,
) -> Result<ParsedRowsPage, HubError> {
    let features = value
        .get("features")
        .and_then(Value::as_array)
        .map(|features| {
            features
                .iter()
                .filter_map(|f| {
                    let name = f.get("name").and_then(Value::as_str)?;
                    let kind = f
                        .get("type")
                        .map(feature_kind)
                        .unwrap_or(ValueKind::Other);
                    Some(Column { name: name.to_string(), value_kind: kind })
                })
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    let total = value.get("num_rows_total").and_then(Value::as_u64);
    let rows = value
        .get("rows")
        .and_then(Value::as_array)
        .ok_or_else(|| HubError::Invalid("rows response missing `rows`".to_string()))?
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let source_index = entry
                .get("row_idx")
                .and_then(Value::as_u64)
                .unwrap_or(offset + i as u64);
            let values = entry
                .get("row")
                .and_then(Value::as_object)
                .map(|object| {
                    object
                        .iter()
                        .map(|(k, v)| (k.clone(), normalize_value(v)))
                        .collect()
                })
                .unwrap_or_default();
            DataRow { values, source_index }
        })
        .collect();
    Ok((rows, total, features))
}

impl HubBackend for RemoteHub {
    fn fetch_card(&self, name: &str) -> Result<DatasetCard, HubError> {
        let url = format!("{}/api/datasets/{}", self.base_url, urlencode(name));
        let text = self.cached_get(&url)?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| HubError::Invalid(format!("card response: {e}")))?;
        Ok(parse_card_response(name, &value))
    }

    fn list_datasets(&self) -> Result<Vec<String>, HubError> {
        // The public hub has 75k+ datasets; enumerating them is not useful.
        // Index building against a remote hub takes an explicit name list.
        Err(HubError::Unsupported("list_datasets on a remote hub".to_string()))
    }

    fn fetch_schema_and_samples(
        &self,
        name: &str,
        config: &str,
        split: &str,
        sample_n: usize,
    ) -> Result<(DatasetSchema, Vec<DataRow>), HubError> {
        let (rows, _, columns) = self.fetch_rows_page(name, config, split, 0, sample_n as u64)?;
        if rows.is_empty() {
            return Err(HubError::EmptyDataset(format!("{name}/{config}")));
        }
        if columns.is_empty() {
            return Err(HubError::Invalid(format!("{name}/{config}: no features returned")));
        }
        Ok((DatasetSchema { columns }, rows))
    }

    fn fetch_rows(
        &self,
        name: &str,
        config: &str,
        split: &str,
        start: u64,
        limit: u64,
    ) -> Result<Vec<RowPage>, HubError> {
        let mut pages = Vec::new();
        let mut offset = start;
        let mut remaining = limit;
        loop {
            let length = remaining.min(ROWS_PAGE);
            if length == 0 {
                break;
            }
            let (rows, total, _) = self.fetch_rows_page(name, config, split, offset, length)?;
            let got = rows.len() as u64;
            let exhausted = got < length || total.map(|t| offset + got >= t).unwrap_or(false);
            offset += got;
            remaining -= got;
            let done = exhausted || remaining == 0;
            pages.push(RowPage {
                rows,
                next_cursor: (!done).then(|| offset.to_string()),
                total_estimate: total,
            });
            if done {
                break;
            }
        }
        Ok(pages)
    }
}

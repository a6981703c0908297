//! Response cache for zero-temperature requests.
//!
//! Entries live in memory and, when a directory is configured, as
//! content-addressed files so interrupted runs resume without repaying
//! per-row LLM cost. Concurrent writers of the same key race harmlessly:
//! at temperature 0 the values are identical by construction.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub struct ResponseCache {
    memory: Mutex<HashMap<String, CachedReply>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        if let Some(dir) = &dir {
            if let Err(e) = std::fs::create_dir_all(dir) {
                tracing::warn!(dir = %dir.display(), error = %e, "cache directory unavailable");
            }
        }
        Self { memory: Mutex::new(HashMap::new()), dir }
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<CachedReply> {
        if let Some(hit) = self.memory.lock().expect("cache lock").get(key) {
            return Some(hit.clone());
        }
        let path = self.path_for(key)?;
        let text = std::fs::read_to_string(path).ok()?;
        let reply: CachedReply = serde_json::from_str(&text).ok()?;
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), reply.clone());
        Some(reply)
    }

    pub fn put(&self, key: &str, reply: CachedReply) {
        if let Some(path) = self.path_for(key) {
            match serde_json::to_string(&reply) {
                Ok(json) => {
                    if let Err(e) = std::fs::write(&path, json) {
                        tracing::warn!(path = %path.display(), error = %e, "cache write failed");
                    }
                }
                Err(e) => tracing::warn!(error = %e, "cache entry did not serialize"),
            }
        }
        self.memory.lock().expect("cache lock").insert(key.to_string(), reply);
    }
}

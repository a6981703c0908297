//! Completion providers: an HTTPS chat-completions client and a
//! deterministic transcript-backed mock.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Raw result of one completion call.
#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Provider asked us to slow down; retry after the hinted delay.
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    /// Connection-level failure worth retrying.
    #[error("transport: {0}")]
    Transport(String),
    /// Provider answered with an error payload.
    #[error("provider error (status {status}): {message}")]
    Api { status: u16, message: String },
}

impl ProviderError {
    /// 5xx responses and transport failures are retryable; 4xx are not.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::RateLimited { .. } | ProviderError::Transport(_) => true,
            ProviderError::Api { status, .. } => *status >= 500,
        }
    }
}

/// A completion backend. Implementations must be safe for concurrent use.
pub trait Provider: Send + Sync {
    fn complete(
        &self,
        model: &str,
        prompt: &str,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<ProviderReply, ProviderError>;
}

/// Stable digest of a prompt, used as the transcript key.
pub fn prompt_digest(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    format!("{:x}", hasher.finalize())
}

fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

// ---------------------------------------------------------------------------
// HTTP provider
// ---------------------------------------------------------------------------

/// OpenAI-style `/chat/completions` client with bearer-token auth.
///
/// The base URL is configurable so any compatible provider works; the key
/// is read from an environment variable, never from flags or config files.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
}

impl HttpProvider {
    pub fn from_env(base_url: Option<String>, key_var: &str) -> Result<Self, ProviderError> {
        let api_key = std::env::var(key_var).map_err(|_| ProviderError::Api {
            status: 401,
            message: format!("environment variable {key_var} is not set"),
        })?;
        let base_url = base_url
            .or_else(|| std::env::var("LLM_BASE_URL").ok())
            .unwrap_or_else(|| "https://api.openai.com/v1".to_string());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self { client, base_url, api_key })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: ChatUsage,
}

impl Provider for HttpProvider {
    fn complete(
        &self,
        model: &str,
        prompt: &str,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<ProviderReply, ProviderError> {
        let body = ChatRequest {
            model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature,
            max_tokens: max_output_tokens,
        };
        let response = self
            .client
            .post(format!("{}/chat/completions", self.base_url.trim_end_matches('/')))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;

        let status = response.status();
        if status.as_u16() == 429 {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(ProviderError::RateLimited { retry_after });
        }
        if !status.is_success() {
            let message = response.text().unwrap_or_default();
            return Err(ProviderError::Api { status: status.as_u16(), message });
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| ProviderError::Transport(format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| ProviderError::Api {
                status: 200,
                message: "response had no choices".to_string(),
            })?;
        Ok(ProviderReply {
            text,
            prompt_tokens: parsed.usage.prompt_tokens,
            completion_tokens: parsed.usage.completion_tokens,
        })
    }
}

// ---------------------------------------------------------------------------
// Mock provider
// ---------------------------------------------------------------------------

/// One transcript rule. Exactly one of `digest`, `pattern` or `contains`
/// selects prompts; the first matching entry in file order wins.
///
/// Responses come from `response` (always the same), `responses` (consumed
/// in call order, repeating the last one when exhausted) or
/// `response_template` (regex captures from `pattern` substituted for
/// `$1`..`$9`, letting one rule answer every row of a dataset).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_template: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::Transport(format!("cannot read transcript {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            ProviderError::Transport(format!("bad transcript {}: {e}", path.display()))
        })
    }
}

/// Record of one mock call, for prompt-content assertions in tests.
#[derive(Debug, Clone)]
pub struct MockCall {
    pub prompt: String,
    pub response: String,
    pub label: Option<String>,
}

struct CompiledEntry {
    entry: TranscriptEntry,
    regex: Option<regex::Regex>,
    next_response: AtomicUsize,
}

/// Deterministic provider backed by a transcript. Same prompts always get
/// the same answers (modulo `responses` sequencing), so pipeline runs are
/// reproducible and offline.
pub struct MockProvider {
    entries: Vec<CompiledEntry>,
    calls: Mutex<Vec<MockCall>>,
}

impl MockProvider {
    pub fn new(transcript: Transcript) -> Result<Self, ProviderError> {
        let mut entries = Vec::with_capacity(transcript.entries.len());
        for entry in transcript.entries {
            let regex = match &entry.pattern {
                Some(p) => Some(regex::Regex::new(p).map_err(|e| {
                    ProviderError::Transport(format!("bad transcript pattern {p:?}: {e}"))
                })?),
                None => None,
            };
            if entry.response.is_none()
                && entry.responses.is_none()
                && entry.response_template.is_none()
            {
                return Err(ProviderError::Transport(
                    "transcript entry has no response form".to_string(),
                ));
            }
            entries.push(CompiledEntry { entry, regex, next_response: AtomicUsize::new(0) });
        }
        Ok(Self { entries, calls: Mutex::new(Vec::new()) })
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Self::new(Transcript::from_file(path)?)
    }

    /// All calls made so far, in arrival order.
    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().expect("mock call log").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("mock call log").len()
    }

    /// Calls grouped by entry label.
    pub fn calls_by_label(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for call in self.calls.lock().expect("mock call log").iter() {
            if let Some(label) = &call.label {
                *counts.entry(label.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    fn respond(&self, prompt: &str) -> Option<(String, Option<String>)> {
        let digest = prompt_digest(prompt);
        for compiled in &self.entries {
            let entry = &compiled.entry;
            let captures = if let Some(want) = &entry.digest {
                if *want != digest {
                    continue;
                }
                None
            } else if let Some(regex) = &compiled.regex {
                match regex.captures(prompt) {
                    Some(c) => Some(c),
                    None => continue,
                }
            } else if let Some(needle) = &entry.contains {
                if !prompt.contains(needle.as_str()) {
                    continue;
                }
                None
            } else {
                continue;
            };

            let text = if let Some(responses) = &entry.responses {
                let idx = compiled.next_response.fetch_add(1, Ordering::SeqCst);
                responses[idx.min(responses.len() - 1)].clone()
            } else if let Some(template) = &entry.response_template {
                let mut text = template.clone();
                if let Some(caps) = &captures {
                    for group in (1..caps.len()).rev() {
                        let value = caps.get(group).map(|m| m.as_str()).unwrap_or("");
                        text = text.replace(&format!("${group}"), value);
                    }
                }
                text
            } else {
                entry.response.clone().unwrap_or_default()
            };
            return Some((text, entry.label.clone()));
        }
        None
    }
}

impl Provider for MockProvider {
    fn complete(
        &self,
        _model: &str,
        prompt: &str,
        _temperature: f64,
        _max_output_tokens: u32,
    ) -> Result<ProviderReply, ProviderError> {
        match self.respond(prompt) {
            Some((text, label)) => {
                let reply = ProviderReply {
                    prompt_tokens: approx_tokens(prompt),
                    completion_tokens: approx_tokens(&text),
                    text: text.clone(),
                };
                self.calls
                    .lock()
                    .expect("mock call log")
                    .push(MockCall { prompt: prompt.to_string(), response: text, label });
                Ok(reply)
            }
            None => {
                let head: String = prompt.chars().take(120).collect();
                Err(ProviderError::Api {
                    status: 404,
                    message: format!(
                        "no transcript entry matches prompt (digest {}): {head}...",
                        prompt_digest(prompt)
                    ),
                })
            }
        }
    }
}

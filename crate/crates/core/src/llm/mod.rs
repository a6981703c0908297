//! Provider-agnostic LLM access: prompt templating, retries with backoff,
//! rate limiting, zero-temperature response caching and JSON extraction.
//!
//! Every pipeline stage funnels through [`Gateway::complete`], which tracks
//! per-stage call counts and token usage for the run report.

mod cache;
mod limiter;
pub mod provider;
pub mod template;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::report::StageUsage;
use cache::{CachedReply, ResponseCache};
use limiter::CallLimiter;
use provider::{Provider, ProviderError};
pub use provider::{MockCall, MockProvider, Transcript, TranscriptEntry};
pub use template::{PromptTemplate, TemplateError, TemplateName};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("transport failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("provider error (status {status}): {message}")]
    Provider { status: u16, message: String },
    #[error("no JSON object found in response")]
    MalformedJson { raw: String },
    #[error("response JSON missing keys: {}", missing.join(", "))]
    MissingKeys { missing: Vec<String>, raw: String },
}

/// One completion request. The cache key is a pure function of
/// (model, prompt, temperature).
#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub cache_key: String,
}

impl LlmRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>, temperature: f64) -> Self {
        let model = model.into();
        let prompt = prompt.into();
        let mut hasher = Sha256::new();
        hasher.update(model.as_bytes());
        hasher.update([0x1f]);
        hasher.update(temperature.to_bits().to_le_bytes());
        hasher.update([0x1f]);
        hasher.update(prompt.as_bytes());
        let cache_key = format!("{:x}", hasher.finalize());
        Self { model, prompt, temperature, max_output_tokens: 2048, cache_key }
    }

    pub fn with_max_tokens(mut self, max_output_tokens: u32) -> Self {
        self.max_output_tokens = max_output_tokens;
        self
    }
}

/// One completion response with usage accounting.
#[derive(Debug, Clone)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub from_cache: bool,
    /// Transport retries performed before this response arrived.
    pub retries: u32,
}

/// Result of JSON extraction: either the last well-formed object in the
/// response, or the dedicated null signal a plan's skip step produces.
#[derive(Debug, Clone, PartialEq)]
pub enum JsonExtract {
    Object(serde_json::Map<String, serde_json::Value>),
    Null,
}

/// Gateway tuning independent of any single request.
#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub max_concurrent: usize,
    pub requests_per_second: Option<f64>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            max_concurrent: 8,
            requests_per_second: None,
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
            cache_dir: None,
        }
    }
}

impl GatewayOptions {
    pub fn from_config(config: &crate::config::PipelineConfig) -> Self {
        Self {
            max_concurrent: config.max_concurrent_llm_calls as usize,
            max_retries: config.max_retries,
            initial_backoff: Duration::from_millis(config.initial_backoff_ms),
            ..Default::default()
        }
    }
}

/// Thread-safe front door to the completion provider.
pub struct Gateway {
    provider: Arc<dyn Provider>,
    cache: ResponseCache,
    limiter: CallLimiter,
    usage: Mutex<BTreeMap<String, StageUsage>>,
    max_retries: u32,
    initial_backoff: Duration,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, options: GatewayOptions) -> Self {
        Self {
            provider,
            cache: ResponseCache::new(options.cache_dir),
            limiter: CallLimiter::new(options.max_concurrent, options.requests_per_second),
            usage: Mutex::new(BTreeMap::new()),
            max_retries: options.max_retries,
            initial_backoff: options.initial_backoff,
        }
    }

    /// Per-stage LLM usage accumulated so far.
    pub fn usage_snapshot(&self) -> BTreeMap<String, StageUsage> {
        self.usage.lock().expect("usage lock").clone()
    }

    fn record(&self, stage: &str, f: impl FnOnce(&mut StageUsage)) {
        let mut usage = self.usage.lock().expect("usage lock");
        f(usage.entry(stage.to_string()).or_default());
    }

    /// Complete a request. Zero-temperature requests are cached by
    /// (model, prompt, temperature); cache hits perform no provider I/O
    /// and are counted separately from calls.
    pub fn complete(&self, stage: &str, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let cacheable = request.temperature == 0.0;
        if cacheable {
            if let Some(hit) = self.cache.get(&request.cache_key) {
                self.record(stage, |u| u.cache_hits += 1);
                return Ok(LlmResponse {
                    text: hit.text,
                    prompt_tokens: hit.prompt_tokens,
                    completion_tokens: hit.completion_tokens,
                    from_cache: true,
                    retries: 0,
                });
            }
        }

        let _permit = self.limiter.acquire();
        let mut retries = 0u32;
        let mut backoff = self.initial_backoff;
        loop {
            match self.provider.complete(
                &request.model,
                &request.prompt,
                request.temperature,
                request.max_output_tokens,
            ) {
                Ok(reply) => {
                    self.record(stage, |u| {
                        u.calls += 1;
                        u.prompt_tokens += reply.prompt_tokens;
                        u.completion_tokens += reply.completion_tokens;
                    });
                    if cacheable {
                        self.cache.put(
                            &request.cache_key,
                            CachedReply {
                                text: reply.text.clone(),
                                prompt_tokens: reply.prompt_tokens,
                                completion_tokens: reply.completion_tokens,
                            },
                        );
                    }
                    return Ok(LlmResponse {
                        text: reply.text,
                        prompt_tokens: reply.prompt_tokens,
                        completion_tokens: reply.completion_tokens,
                        from_cache: false,
                        retries,
                    });
                }
                Err(err) if err.is_retryable() && retries < self.max_retries => {
                    let wait = match &err {
                        ProviderError::RateLimited { retry_after: Some(after) } => *after,
                        _ => backoff,
                    };
                    tracing::warn!(stage, retry = retries + 1, error = %err, "retrying LLM call");
                    std::thread::sleep(wait);
                    backoff = backoff.saturating_mul(2);
                    retries += 1;
                }
                Err(ProviderError::Api { status, message }) if status < 500 => {
                    return Err(GatewayError::Provider { status, message });
                }
                Err(err) => {
                    return Err(GatewayError::Exhausted {
                        attempts: retries + 1,
                        last: err.to_string(),
                    });
                }
            }
        }
    }

    /// Complete and extract the last well-formed JSON object from the
    /// response text, tolerating chain-of-thought preambles. A bare `null`
    /// answer is the dedicated skip signal, not an error.
    pub fn complete_json(
        &self,
        stage: &str,
        request: &LlmRequest,
        required_keys: &[&str],
    ) -> Result<JsonExtract, GatewayError> {
        let response = self.complete(stage, request)?;
        extract_json(&response.text, required_keys)
    }
}

/// Extract the last balanced `{...}` region that parses as a JSON object.
/// When none exists, a final bare `null` token is the skip signal.
pub fn extract_json(text: &str, required_keys: &[&str]) -> Result<JsonExtract, GatewayError> {
    if let Some(object) = last_json_object(text) {
        let missing: Vec<String> = required_keys
            .iter()
            .filter(|k| !object.contains_key(**k))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(GatewayError::MissingKeys { missing, raw: text.to_string() });
        }
        return Ok(JsonExtract::Object(object));
    }
    if ends_with_null(text) {
        return Ok(JsonExtract::Null);
    }
    Err(GatewayError::MalformedJson { raw: text.to_string() })
}

fn last_json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let bytes = text.as_bytes();
    let mut best = None;
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if let Some(s) = start {
                        let candidate = &text[s..=i];
                        if let Ok(serde_json::Value::Object(map)) =
                            serde_json::from_str::<serde_json::Value>(candidate)
                        {
                            best = Some(map);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    best
}

fn ends_with_null(text: &str) -> bool {
    let last_line = text.lines().rev().find(|l| !l.trim().is_empty());
    let Some(line) = last_line else { return false };
    let Some(token) = line.split_whitespace().last() else { return false };
    let token = token.trim_matches(|c: char| "`'\".,;:!)]}".contains(c));
    token.eq_ignore_ascii_case("null")
}

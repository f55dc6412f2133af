use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{DescriptionRecord, Origin, QualityPolicy};
use crate::digest::{sha256_hex, write_atomic};
use crate::ingest::python::clean_doc;

pub const SUMMARY_TEMPLATE: &str = "Provide a concise description of the problem solved in the code snippet below. Format the response as a docstring.\n\n{code}";

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "CAF_API_KEY";

const CODE_SLOT: &str = "{code}";

pub fn render_summary_prompt(code: &str) -> String {
    let (head, tail) = SUMMARY_TEMPLATE
        .split_once(CODE_SLOT)
        .expect("template has a code slot");
    format!("{head}{code}{tail}")
}

pub fn summary_template_hash() -> String {
    sha256_hex(SUMMARY_TEMPLATE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizerConfig {
    /// Chat-completions URL. Unused in cache-only mode.
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// Attempts after the first one for transient failures.
    pub max_retries: u32,
    /// Base delay, doubled on each retry.
    pub backoff_ms: u64,
    pub requests_per_second: Option<f64>,
    pub max_in_flight: usize,
    pub cache_dir: PathBuf,
    pub cache_only: bool,
    pub api_key_env: String,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            endpoint: None,
            model: "Qwen/Qwen3-14B".into(),
            temperature: 0.0,
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            requests_per_second: None,
            max_in_flight: 4,
            cache_dir: PathBuf::from("summary-cache"),
            cache_only: true,
            api_key_env: API_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("endpoint rejected the request with status {status}: {message}")]
    Rejected { status: u16, message: String },
}

/// Sends one completion request and returns the raw response text.
pub trait CompletionTransport: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError>;
}

/// OpenAI-compatible chat-completions client.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            endpoint: endpoint.into(),
            api_key,
        }
    }
}

impl CompletionTransport for HttpTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let response = call
            .send_json(&body)
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(TransportError::Transient(format!("status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(TransportError::Rejected {
                status,
                message: text,
            });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| TransportError::Rejected {
                status,
                message: format!("response is not JSON: {e}"),
            })?;
        let choice = &value["choices"][0];
        choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .map(str::to_string)
            .ok_or_else(|| TransportError::Rejected {
                status,
                message: "response has no choices[0].message.content".into(),
            })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SummarizeError {
    #[error("summary endpoint unavailable after {attempts} attempts: {reason}")]
    ServiceUnavailable { attempts: u32, reason: String },
    #[error("no cached summary for {function_id} (code hash {code_hash}) in cache-only mode")]
    CacheMiss {
        function_id: String,
        code_hash: String,
    },
    #[error("summary endpoint returned an empty description for {0}")]
    EmptyResponse(String),
    #[error(transparent)]
    Rejected(TransportError),
    #[error("summarizer misconfigured: {0}")]
    Config(String),
    #[error("summary cache I/O at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One request/response pair as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub template_hash: String,
    pub code_hash: String,
    pub prompt_hash: String,
    pub request: CompletionRequest,
    pub response: String,
}

/// Strips code fences and docstring quotes from a model answer and removes
/// common indentation.
pub fn clean_summary(raw: &str) -> String {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.split_once('\n').map_or("", |(_, body)| body);
        text = rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    for quote in ["\"\"\"", "'''"] {
        if let Some(inner) = text.strip_prefix(quote).and_then(|t| t.strip_suffix(quote)) {
            text = inner;
            break;
        }
    }
    clean_doc(text)
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut count = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *count >= self.limit {
            count = self.freed.wait(count).unwrap_or_else(|e| e.into_inner());
        }
        *count += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut count = self.0.count.lock().unwrap_or_else(|e| e.into_inner());
        *count -= 1;
        self.0.freed.notify_one();
    }
}

/// Cached, rate-limited summarizer. Safe to share across threads.
pub struct SummaryClient {
    config: SummarizerConfig,
    transport: Option<Box<dyn CompletionTransport>>,
    next_start: Mutex<Option<Instant>>,
    in_flight: InFlight,
    network_calls: AtomicUsize,
}

impl SummaryClient {
    /// HTTP client per `config`, or a cache-only client when
    /// `config.cache_only` is set.
    pub fn new(config: SummarizerConfig) -> Result<Self, SummarizeError> {
        if config.cache_only {
            return Ok(Self::build(config, None));
        }
        let endpoint = config.endpoint.clone().ok_or_else(|| {
            SummarizeError::Config("endpoint is required unless cache_only".into())
        })?;
        let api_key = std::env::var(&config.api_key_env).ok();
        let transport =
            HttpTransport::new(endpoint, Duration::from_secs(config.timeout_secs), api_key);
        Ok(Self::build(config, Some(Box::new(transport))))
    }

    pub fn with_transport(
        config: SummarizerConfig,
        transport: Box<dyn CompletionTransport>,
    ) -> Self {
        Self::build(config, Some(transport))
    }

    fn build(config: SummarizerConfig, transport: Option<Box<dyn CompletionTransport>>) -> Self {
        let limit = config.max_in_flight.max(1);
        SummaryClient {
            config,
            transport,
            next_start: Mutex::new(None),
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &SummarizerConfig {
        &self.config
    }

    /// Requests sent to the transport so far, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    pub fn cache_path(&self, code: &str) -> PathBuf {
        self.config
            .cache_dir
            .join(summary_template_hash())
            .join(format!("{}.json", sha256_hex(code)))
    }

    pub fn summarize(
        &self,
        function_id: &str,
        code: &str,
    ) -> Result<DescriptionRecord, SummarizeError> {
        let prompt = render_summary_prompt(code);
        let prompt_hash = sha256_hex(&prompt);
        let path = self.cache_path(code);
        let response = match read_cache(&path) {
            Some(entry) => entry.response,
            None => {
                let transport = match (&self.transport, self.config.cache_only) {
                    (Some(t), false) => t,
                    _ => {
                        return Err(SummarizeError::CacheMiss {
                            function_id: function_id.to_string(),
                            code_hash: sha256_hex(code),
                        })
                    }
                };
                let request = CompletionRequest {
                    model: self.config.model.clone(),
                    prompt,
                    temperature: self.config.temperature,
                };
                let response = self.call_with_retries(transport.as_ref(), &request)?;
                if clean_summary(&response).is_empty() {
                    return Err(SummarizeError::EmptyResponse(function_id.to_string()));
                }
                let entry = CacheEntry {
                    template_hash: summary_template_hash(),
                    code_hash: sha256_hex(code),
                    prompt_hash: prompt_hash.clone(),
                    request,
                    response,
                };
                store_cache(&path, &entry)?;
                entry.response
            }
        };
        let text = clean_summary(&response);
        if text.is_empty() {
            return Err(SummarizeError::EmptyResponse(function_id.to_string()));
        }
        Ok(DescriptionRecord {
            function_id: function_id.to_string(),
            quality_flags: QualityPolicy::default().assess(&text),
            text,
            origin: Origin::Generated,
            prompt_hash: Some(prompt_hash),
        })
    }

    fn call_with_retries(
        &self,
        transport: &dyn CompletionTransport,
        request: &CompletionRequest,
    ) -> Result<String, SummarizeError> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            self.wait_for_rate_limit();
            let _permit = self.in_flight.acquire();
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            match transport.complete(request) {
                Ok(text) => return Ok(text),
                Err(TransportError::Transient(reason)) => {
                    log::warn!("summary request attempt {} failed: {reason}", attempt + 1);
                    last = reason;
                }
                Err(rejected) => return Err(SummarizeError::Rejected(rejected)),
            }
        }
        Err(SummarizeError::ServiceUnavailable {
            attempts,
            reason: last,
        })
    }

    fn wait_for_rate_limit(&self) {
        let Some(rate) = self.config.requests_per_second.filter(|r| *r > 0.0) else {
            return;
        };
        let interval = Duration::from_secs_f64(1.0 / rate);
        let wait = {
            let mut next = self.next_start.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = next.map_or(now, |n| n.max(now));
            *next = Some(start + interval);
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

fn read_cache(path: &Path) -> Option<CacheEntry> {
    let bytes = fs::read(path).ok()?;
    match serde_json::from_slice::<CacheEntry>(&bytes) {
        Ok(entry) if entry.template_hash == summary_template_hash() => Some(entry),
        Ok(_) => None,
        Err(e) => {
            log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
            None
        }
    }
}

fn store_cache(path: &Path, entry: &CacheEntry) -> Result<(), SummarizeError> {
    let io = |source| SummarizeError::Cache {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let json = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
    write_atomic(path, &json).map_err(io)
}

//! Uniform interface to chat-completion and embedding backends.
//!
//! Three backend kinds sit behind one [`Gateway`]: a live OpenAI-compatible
//! HTTP client, a fixture-driven scripted backend, and a fully deterministic
//! synthetic backend (hash embeddings plus rule-based completions). The
//! gateway adds what every caller needs and no backend should reimplement:
//! retry with exponential backoff, an admission gate bounding in-flight
//! requests, token metering, and optional response caching.
//!
//! Under the scripted or synthetic backends the whole downstream pipeline is
//! a pure function of (corpus, config, seed).

mod http;
mod scripted;
mod synthetic;
pub mod templates;
pub mod testing;

pub use http::HttpBackend;
pub use scripted::{fixture_key, strict_fixture_key, ScriptedBackend};
pub use synthetic::SyntheticBackend;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which pipeline stage a prompt belongs to. Tags key fixtures, metering,
/// and the per-stage temperature policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTag {
    Profile,
    Extraction,
    EdgeScoring,
    Recommendation,
}

impl PromptTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptTag::Profile => "profile",
            PromptTag::Extraction => "extraction",
            PromptTag::EdgeScoring => "edge_scoring",
            PromptTag::Recommendation => "recommendation",
        }
    }
}

/// A fully rendered chat request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub tag: PromptTag,
}

/// A fixed-length embedding. All vectors inside one knowledge base share
/// `model_id` and dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| *v as f64 * *v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity accumulated in f64. Zero vectors compare as 0.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let mut dot = 0f64;
        let mut na = 0f64;
        let mut nb = 0f64;
        for (a, b) in self.values.iter().zip(other.values.iter()) {
            let (a, b) = (*a as f64, *b as f64);
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpOpenaiCompatible,
    Scripted,
    HashSynthetic,
}

/// Backend selection and transport policy. One config drives both chat and
/// embedding calls so parity across backends holds by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// is never read from files.
    pub api_key_env: String,
    pub model_name: String,
    pub embed_model_name: String,
    pub max_inflight: usize,
    pub retry_limit: u32,
    pub timeout_secs: u64,
    pub backoff_ms: u64,
    /// Fixture directory for the scripted backend.
    pub fixtures_path: Option<PathBuf>,
    /// Strict fixtures key on full prompt text instead of normalized hash.
    pub strict_fixtures: bool,
    /// Dimension of synthetic hash embeddings.
    pub embed_dim: usize,
    /// Inputs longer than this are truncated before embedding, with a warning
    /// counted in the meter.
    pub embed_max_chars: usize,
    /// Sampling temperature for the recommendation stage. Scoring, extraction
    /// and profile stages always run at 0.
    pub recommendation_temperature: f64,
    /// Response cache keyed by prompt hash; off by default.
    pub cache_responses: bool,
    /// Optional JSONL meter log, one line per logical chat call.
    pub meter_log: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::HashSynthetic,
            base_url: None,
            api_key_env: "OPENAI_API_KEY".to_string(),
            model_name: "gpt-4o-mini".to_string(),
            embed_model_name: String::new(),
            max_inflight: 4,
            retry_limit: 3,
            timeout_secs: 60,
            backoff_ms: 250,
            fixtures_path: None,
            strict_fixtures: false,
            embed_dim: 256,
            embed_max_chars: 8000,
            recommendation_temperature: 0.0,
            cache_responses: false,
            meter_log: None,
        }
    }
}

impl BackendConfig {
    pub fn synthetic() -> Self {
        BackendConfig::default()
    }

    pub fn scripted(fixtures_path: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            fixtures_path: Some(fixtures_path.into()),
            ..BackendConfig::default()
        }
    }
}

/// Raw completion plus token usage as reported (or estimated) by a backend.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Transport implemented by every backend. Implementations must be pure or
/// internally synchronized; the gateway may call them from several threads.
pub trait Backend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply>;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
    fn embed_model_id(&self) -> String;
}

/// Rough token estimate for offline backends: one token per four characters.
pub(crate) fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Default, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MeterSnapshot {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub retries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub truncated_embed_inputs: u64,
    pub calls_per_tag: BTreeMap<String, u64>,
}

struct MeterInner {
    snapshot: MeterSnapshot,
    log: Option<std::io::BufWriter<std::fs::File>>,
}

struct Meter {
    inner: Mutex<MeterInner>,
}

impl Meter {
    fn new(log_path: Option<&PathBuf>) -> Result<Self> {
        let log = match log_path {
            Some(path) => {
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                Some(std::io::BufWriter::new(file))
            }
            None => None,
        };
        Ok(Meter {
            inner: Mutex::new(MeterInner {
                snapshot: MeterSnapshot::default(),
                log,
            }),
        })
    }

    /// One record per logical chat call; retries are counted separately, so
    /// recorded calls always equal calls issued.
    fn record_chat(
        &self,
        tag: PromptTag,
        prompt_tokens: u64,
        completion_tokens: u64,
        retries: u64,
    ) {
        let mut inner = self.inner.lock().expect("meter poisoned");
        inner.snapshot.chat_calls += 1;
        inner.snapshot.retries += retries;
        inner.snapshot.prompt_tokens += prompt_tokens;
        inner.snapshot.completion_tokens += completion_tokens;
        *inner
            .snapshot
            .calls_per_tag
            .entry(tag.as_str().to_string())
            .or_insert(0) += 1;
        if inner.log.is_some() {
            let timestamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let line = serde_json::json!({
                "timestamp": timestamp,
                "tag": tag.as_str(),
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "retries": retries,
            });
            let log = inner.log.as_mut().expect("checked above");
            let _ = writeln!(log, "{line}");
            let _ = log.flush();
        }
    }

    fn record_embed(&self, texts: usize, truncated: u64, retries: u64) {
        let mut inner = self.inner.lock().expect("meter poisoned");
        inner.snapshot.embed_calls += texts as u64;
        inner.snapshot.truncated_embed_inputs += truncated;
        inner.snapshot.retries += retries;
    }

    fn snapshot(&self) -> MeterSnapshot {
        self.inner.lock().expect("meter poisoned").snapshot.clone()
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct AdmissionGate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl AdmissionGate {
    fn new(max_inflight: usize) -> Self {
        AdmissionGate {
            permits: Mutex::new(max_inflight.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().expect("gate poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("gate poisoned");
        }
        *permits -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a AdmissionGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().expect("gate poisoned");
        *permits += 1;
        self.gate.available.notify_one();
    }
}

/// Shared front door for all LLM traffic.
pub struct Gateway {
    backend: Box<dyn Backend>,
    config: BackendConfig,
    meter: Meter,
    gate: AdmissionGate,
    cache: Mutex<BTreeMap<String, String>>,
}

impl Gateway {
    /// Builds the backend named by `config.kind`.
    pub fn new(config: BackendConfig) -> Result<Gateway> {
        let backend: Box<dyn Backend> = match config.kind {
            BackendKind::HttpOpenaiCompatible => Box::new(HttpBackend::from_config(&config)?),
            BackendKind::Scripted => {
                let path = config.fixtures_path.as_ref().ok_or_else(|| {
                    Error::Config("scripted backend requires fixtures_path".to_string())
                })?;
                Box::new(ScriptedBackend::from_dir(path, &config)?)
            }
            BackendKind::HashSynthetic => Box::new(SyntheticBackend::from_config(&config)),
        };
        Gateway::with_backend(config, backend)
    }

    /// Wraps a caller-supplied backend; used by tests and embedding callers
    /// that need bespoke behavior behind the same gate/meter/retry policy.
    pub fn with_backend(config: BackendConfig, backend: Box<dyn Backend>) -> Result<Gateway> {
        let meter = Meter::new(config.meter_log.as_ref())?;
        let gate = AdmissionGate::new(config.max_inflight);
        Ok(Gateway {
            backend,
            config,
            meter,
            gate,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn embed_model_id(&self) -> String {
        self.backend.embed_model_id()
    }

    pub fn max_inflight(&self) -> usize {
        self.config.max_inflight.max(1)
    }

    pub fn meter(&self) -> MeterSnapshot {
        self.meter.snapshot()
    }

    /// Renders a template and applies the config temperature policy.
    pub fn render(&self, tag: PromptTag, slots: &BTreeMap<String, String>) -> Result<ChatRequest> {
        let mut request = templates::render_template(tag, slots)?;
        if tag == PromptTag::Recommendation {
            request.temperature = self.config.recommendation_temperature;
        }
        Ok(request)
    }

    /// Sends a chat request, retrying transient failures with exponential
    /// backoff up to `retry_limit`. Returns the raw completion text.
    pub fn chat(&self, request: &ChatRequest) -> Result<String> {
        let cache_key = if self.config.cache_responses {
            Some(format!(
                "{}:{}",
                request.tag.as_str(),
                crate::text::sha256_hex(
                    format!("{}\n\n{}", request.system_prompt, request.user_prompt).as_bytes()
                )
            ))
        } else {
            None
        };
        if let Some(key) = &cache_key {
            if let Some(hit) = self.cache.lock().expect("cache poisoned").get(key) {
                return Ok(hit.clone());
            }
        }

        let _permit = self.gate.acquire();
        let mut retries = 0u64;
        let mut last: Option<Error> = None;
        for attempt in 0..=self.config.retry_limit {
            if attempt > 0 {
                retries += 1;
                std::thread::sleep(Duration::from_millis(
                    self.config
                        .backoff_ms
                        .saturating_mul(1 << (attempt - 1).min(6)),
                ));
            }
            match self.backend.chat(request) {
                Ok(reply) => {
                    self.meter.record_chat(
                        request.tag,
                        reply.prompt_tokens,
                        reply.completion_tokens,
                        retries,
                    );
                    if let Some(key) = cache_key {
                        self.cache
                            .lock()
                            .expect("cache poisoned")
                            .insert(key, reply.text.clone());
                    }
                    return Ok(reply.text);
                }
                Err(err) if err.is_retryable() => last = Some(err),
                Err(err) => {
                    self.meter.record_chat(request.tag, 0, 0, retries);
                    return Err(err);
                }
            }
        }
        self.meter.record_chat(request.tag, 0, 0, retries);
        Err(Error::RetriesExhausted {
            attempts: self.config.retry_limit + 1,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    /// Embeds a batch, order- and length-preserving. Over-long inputs are
    /// truncated and counted in the meter.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Backend {
                message: "embed called with no texts".to_string(),
                retryable: false,
            });
        }
        let mut truncated = 0u64;
        let prepared: Vec<String> = texts
            .iter()
            .map(|t| {
                if t.chars().count() > self.config.embed_max_chars {
                    truncated += 1;
                    t.chars().take(self.config.embed_max_chars).collect()
                } else {
                    t.clone()
                }
            })
            .collect();

        let _permit = self.gate.acquire();
        let mut retries = 0u64;
        let mut last: Option<Error> = None;
        for attempt in 0..=self.config.retry_limit {
            if attempt > 0 {
                retries += 1;
                std::thread::sleep(Duration::from_millis(
                    self.config
                        .backoff_ms
                        .saturating_mul(1 << (attempt - 1).min(6)),
                ));
            }
            match self.backend.embed(&prepared) {
                Ok(vectors) => {
                    debug_assert_eq!(vectors.len(), texts.len());
                    self.meter.record_embed(texts.len(), truncated, retries);
                    return Ok(vectors);
                }
                Err(err) if err.is_retryable() => last = Some(err),
                Err(err) => {
                    self.meter.record_embed(texts.len(), truncated, retries);
                    return Err(err);
                }
            }
        }
        self.meter.record_embed(texts.len(), truncated, retries);
        Err(Error::RetriesExhausted {
            attempts: self.config.retry_limit + 1,
            last: last.map(|e| e.to_string()).unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_embed_is_deterministic_and_unit_norm() {
        let gateway = Gateway::new(BackendConfig::synthetic()).unwrap();
        let texts = vec!["space shooter with lasers".to_string()];
        let a = gateway.embed(&texts).unwrap();
        let b = gateway.embed(&texts).unwrap();
        assert_eq!(a, b);
        assert!((a[0].l2_norm() - 1.0).abs() < 1e-6);
        assert_eq!(a[0].dim(), 256);
    }

    #[test]
    fn shared_tokens_score_higher_than_disjoint() {
        let gateway = Gateway::new(BackendConfig::synthetic()).unwrap();
        let vs = gateway
            .embed(&[
                "galactic space shooter arcade".to_string(),
                "galactic space shooter saga".to_string(),
                "quiet farming village sim".to_string(),
            ])
            .unwrap();
        let close = vs[0].cosine(&vs[1]);
        let far = vs[0].cosine(&vs[2]);
        assert!(close > far, "close={close} far={far}");
    }

    #[test]
    fn embed_preserves_order_and_length() {
        let gateway = Gateway::new(BackendConfig::synthetic()).unwrap();
        let texts: Vec<String> = (0..7).map(|i| format!("text number {i}")).collect();
        let vectors = gateway.embed(&texts).unwrap();
        assert_eq!(vectors.len(), 7);
        let singly: Vec<EmbeddingVector> = texts
            .iter()
            .map(|t| gateway.embed(std::slice::from_ref(t)).unwrap().remove(0))
            .collect();
        assert_eq!(vectors, singly);
    }

    #[test]
    fn meter_counts_logical_calls_once() {
        let gateway = Gateway::new(BackendConfig::synthetic()).unwrap();
        let request = ChatRequest {
            system_prompt: "s".to_string(),
            user_prompt: "Title: A\nDescription: b".to_string(),
            max_tokens: 64,
            temperature: 0.0,
            tag: PromptTag::Profile,
        };
        gateway.chat(&request).unwrap();
        gateway.chat(&request).unwrap();
        let meter = gateway.meter();
        assert_eq!(meter.chat_calls, 2);
        assert_eq!(meter.calls_per_tag.get("profile"), Some(&2));
        assert_eq!(meter.retries, 0);
    }

    #[test]
    fn meter_log_appends_one_line_per_logical_call() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("meter.jsonl");
        let mut config = BackendConfig::synthetic();
        config.meter_log = Some(log_path.clone());
        let gateway = Gateway::new(config).unwrap();
        let request = ChatRequest {
            system_prompt: "s".to_string(),
            user_prompt: "Title: A".to_string(),
            max_tokens: 64,
            temperature: 0.0,
            tag: PromptTag::Extraction,
        };
        gateway.chat(&request).unwrap();
        gateway.chat(&request).unwrap();
        let log = std::fs::read_to_string(&log_path).unwrap();
        let lines: Vec<serde_json::Value> = log
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        for line in &lines {
            assert_eq!(line["tag"], "extraction");
            assert_eq!(line["retries"], 0);
            assert!(line["timestamp"].is_u64());
            assert!(line["prompt_tokens"].is_u64());
            assert!(line["completion_tokens"].is_u64());
        }
    }

    #[test]
    fn cache_disabled_by_default_enabled_by_flag() {
        let mut config = BackendConfig::synthetic();
        config.cache_responses = true;
        let gateway = Gateway::new(config).unwrap();
        let request = ChatRequest {
            system_prompt: "s".to_string(),
            user_prompt: "Title: A".to_string(),
            max_tokens: 64,
            temperature: 0.0,
            tag: PromptTag::Profile,
        };
        let first = gateway.chat(&request).unwrap();
        let second = gateway.chat(&request).unwrap();
        assert_eq!(first, second);
        // Second call served from cache: only one metered call.
        assert_eq!(gateway.meter().chat_calls, 1);
    }
}

//! Dispatch of prompt requests to an OpenAI-compatible chat-completions
//! endpoint: bounded concurrency, exponential-backoff retries, and a
//! transport trait so tests can script the wire without a network.
//!
//! The API key is read from the environment, never logged, and never
//! serialized into any report or run artifact.

use crate::prompts::PromptRequest;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "SOV_API_KEY";

/// Longest image side accepted on the wire; larger images are downscaled.
pub const MAX_IMAGE_SIDE: u32 = 2048;

/// Bearer credential with redacted Debug/Display so it cannot leak through
/// logs or error chains. Deliberately not serializable.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV).ok().filter(|v| !v.is_empty()).map(Self)
    }

    fn reveal(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(****)")
    }
}

impl fmt::Display for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("****")
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication rejected (HTTP {status}); check {API_KEY_ENV}")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("server error HTTP {status} after {attempts} attempts")]
    Server { status: u16, attempts: u32 },
    #[error("unexpected HTTP {status}: {detail}")]
    Http { status: u16, detail: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("network failure after {attempts} attempts: {detail}")]
    Network { detail: String, attempts: u32 },
    #[error("no scripted response for request {digest}")]
    Unscripted { digest: String },
    #[error("image processing failed: {0}")]
    Image(String),
    #[error("configuration invalid: {0}")]
    Config(String),
}

impl ClientError {
    /// True for failures of the transport/endpoint rather than local input.
    pub fn is_transport(&self) -> bool {
        !matches!(self, ClientError::Image(_) | ClientError::Config(_))
    }
}

/// Connection settings for one endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Never serialized; sourced from the environment.
    #[serde(skip)]
    pub api_key: Option<ApiKey>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// First backoff delay; doubles per retry (1s, 2s, 4s by default).
    pub backoff_initial_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4o".to_string(),
            api_key: None,
            timeout_secs: 120.0,
            max_retries: 3,
            max_concurrent: 4,
            temperature: 0.0,
            max_tokens: None,
            backoff_initial_ms: 1000,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.timeout_secs > 0.0) {
            return Err(ClientError::Config(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.max_concurrent == 0 {
            return Err(ClientError::Config("max_concurrent must be >= 1".into()));
        }
        Ok(())
    }
}

/// Token counts reported by the endpoint, when present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

/// One transport attempt in the retry trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub status: Option<u16>,
    pub outcome: String,
    pub backoff_ms: u64,
}

/// Status/retry trail attached to every answer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportMeta {
    pub attempts: Vec<AttemptRecord>,
    pub retries: u32,
    pub downscaled: bool,
}

/// The raw model reply, byte-exact as received, bound to its request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub raw_text: String,
    pub request_digest: String,
    pub latency_secs: f64,
    pub token_usage: Option<TokenUsage>,
    pub transport_meta: TransportMeta,
}

/// Anything that can answer a prompt request: the live client or a mock.
pub trait AnswerSource: Send + Sync {
    fn answer(&self, request: &PromptRequest) -> Result<ModelAnswer, ClientError>;
}

/// A raw HTTP-level reply.
#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
}

/// Low-level wire executor; `body` is the exact JSON payload, reused
/// byte-identically across retries.
pub trait ChatTransport: Send + Sync {
    fn execute(&self, body: &str, cfg: &EndpointConfig) -> Result<HttpReply, TransportError>;
}

/// Blocking HTTPS transport for `<base_url>/chat/completions`.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(cfg: &EndpointConfig) -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl ChatTransport for HttpTransport {
    fn execute(&self, body: &str, cfg: &EndpointConfig) -> Result<HttpReply, TransportError> {
        let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &cfg.api_key {
            req = req.header("authorization", format!("Bearer {}", key.reveal()));
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                // reqwest error strings never include header values
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

// ---- wire format -----------------------------------------------------------

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    messages: Vec<WireMessage<'a>>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: Vec<WirePart<'a>>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: WireImageUrl },
}

#[derive(Serialize)]
struct WireImageUrl {
    url: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireRespMessage,
}

#[derive(Deserialize)]
struct WireRespMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Serializes the chat-completions JSON body for a request.
fn wire_body(req: &PromptRequest, png: &[u8], cfg: &EndpointConfig) -> String {
    let payload = WireRequest {
        model: &cfg.model_name,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        messages: vec![WireMessage {
            role: "user",
            content: vec![
                WirePart::Text { text: &req.question },
                WirePart::ImageUrl {
                    image_url: WireImageUrl {
                        url: format!("data:image/png;base64,{}", BASE64.encode(png)),
                    },
                },
            ],
        }],
    };
    serde_json::to_string(&payload).expect("wire request serializes")
}

/// Extracts the first choice's content, or explains what was missing.
fn extract_content(body: &str) -> Result<(String, Option<TokenUsage>), ClientError> {
    let parsed: WireResponse = serde_json::from_str(body)
        .map_err(|e| ClientError::Malformed(format!("response is not valid JSON: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ClientError::Malformed("response has no choices".into()))?;
    let content = choice
        .message
        .content
        .ok_or_else(|| ClientError::Malformed("choice is missing the content field".into()))?;
    Ok((content, parsed.usage))
}

// ---- bounded concurrency gate ----------------------------------------------

struct GateState {
    in_flight: usize,
}

/// Counting semaphore limiting concurrent in-flight requests.
pub struct Gate {
    state: Mutex<GateState>,
    cv: Condvar,
    limit: usize,
}

impl Gate {
    pub fn new(limit: usize) -> Self {
        Self {
            state: Mutex::new(GateState { in_flight: 0 }),
            cv: Condvar::new(),
            limit: limit.max(1),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut state = self.state.lock().unwrap();
        while state.in_flight >= self.limit {
            state = self.cv.wait(state).unwrap();
        }
        state.in_flight += 1;
        GatePermit { gate: self }
    }
}

pub struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut state = self.gate.state.lock().unwrap();
        state.in_flight -= 1;
        self.gate.cv.notify_one();
    }
}

// ---- client ------------------------------------------------------------------

/// Retrying, concurrency-bounded client over any [`ChatTransport`].
pub struct VlmClient {
    cfg: EndpointConfig,
    transport: Arc<dyn ChatTransport>,
    gate: Gate,
    /// When set, redacted request/response JSON is written here per exchange.
    log_dir: Option<PathBuf>,
}

impl VlmClient {
    /// Live HTTPS client.
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        let transport = Arc::new(HttpTransport::new(&cfg)?);
        Ok(Self::with_transport(cfg, transport))
    }

    /// Client over a caller-supplied transport (tests, local fakes).
    pub fn with_transport(cfg: EndpointConfig, transport: Arc<dyn ChatTransport>) -> Self {
        let gate = Gate::new(cfg.max_concurrent);
        Self {
            cfg,
            transport,
            gate,
            log_dir: None,
        }
    }

    pub fn with_log_dir(mut self, dir: PathBuf) -> Self {
        self.log_dir = Some(dir);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// Downscales the payload so its longest side fits [`MAX_IMAGE_SIDE`].
    fn effective_png(&self, req: &PromptRequest) -> Result<(Vec<u8>, bool), ClientError> {
        let longest = req.width.max(req.height);
        if longest <= MAX_IMAGE_SIDE {
            return Ok((req.image_png.clone(), false));
        }
        let scale = f64::from(MAX_IMAGE_SIDE) / f64::from(longest);
        let new_w = ((f64::from(req.width) * scale).round() as u32).max(1);
        let new_h = ((f64::from(req.height) * scale).round() as u32).max(1);
        let decoded =
            crate::annotate::decode_png(&req.image_png).map_err(|e| ClientError::Image(e.to_string()))?;
        let resized = image::imageops::resize(&decoded, new_w, new_h, image::imageops::FilterType::Triangle);
        let bytes =
            crate::annotate::encode_png_bytes(&resized).map_err(|e| ClientError::Image(e.to_string()))?;
        Ok((bytes, true))
    }

    fn log_exchange(&self, digest: &str, kind: &str, payload: &serde_json::Value) {
        let Some(dir) = &self.log_dir else { return };
        let path = dir.join(format!("{digest}.{kind}.json"));
        if let Ok(text) = serde_json::to_string_pretty(payload) {
            if let Err(e) = std::fs::write(&path, text) {
                log::debug!("could not write transport log {}: {e}", path.display());
            }
        }
    }

    /// Sends one chat completion: the question as the text part, the image as
    /// a base64 PNG part. Retries transport failures and 429/5xx with
    /// exponential backoff; 401/403 fail immediately.
    pub fn query(&self, req: &PromptRequest) -> Result<ModelAnswer, ClientError> {
        let _permit = self.gate.acquire();
        let request_digest = req.digest();
        let (png, downscaled) = self.effective_png(req)?;
        if downscaled {
            log::warn!(
                "request {request_digest}: image {}x{} downscaled to fit {MAX_IMAGE_SIDE}px",
                req.width,
                req.height
            );
        }
        let body = wire_body(req, &png, &self.cfg);
        self.log_exchange(
            &request_digest,
            "request",
            &serde_json::json!({
                "endpoint": format!("{}/chat/completions", self.cfg.base_url),
                "model": self.cfg.model_name,
                "question": req.question,
                "image_digest": req.image_digest,
                "image_bytes": png.len(),
                "downscaled": downscaled,
            }),
        );

        let mut meta = TransportMeta {
            downscaled,
            ..TransportMeta::default()
        };
        let start = Instant::now();
        let max_attempts = self.cfg.max_retries + 1;

        for attempt in 0..max_attempts {
            let is_last = attempt + 1 == max_attempts;
            let outcome = self.transport.execute(&body, &self.cfg);
            match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    meta.attempts.push(AttemptRecord {
                        status: Some(reply.status),
                        outcome: "ok".into(),
                        backoff_ms: 0,
                    });
                    meta.retries = attempt;
                    let (content, usage) = extract_content(&reply.body)?;
                    let answer = ModelAnswer {
                        raw_text: content,
                        request_digest: request_digest.clone(),
                        latency_secs: start.elapsed().as_secs_f64(),
                        token_usage: usage,
                        transport_meta: meta,
                    };
                    self.log_exchange(
                        &request_digest,
                        "response",
                        &serde_json::json!({
                            "status": reply.status,
                            "raw_text": answer.raw_text,
                            "retries": answer.transport_meta.retries,
                        }),
                    );
                    return Ok(answer);
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    // never retried
                    return Err(ClientError::Auth { status: reply.status });
                }
                Ok(reply) if reply.status == 429 || (500..600).contains(&reply.status) => {
                    let backoff = self.backoff_ms(attempt, is_last);
                    meta.attempts.push(AttemptRecord {
                        status: Some(reply.status),
                        outcome: format!("retryable HTTP {}", reply.status),
                        backoff_ms: backoff,
                    });
                    if is_last {
                        return Err(if reply.status == 429 {
                            ClientError::RateLimited { attempts: max_attempts }
                        } else {
                            ClientError::Server {
                                status: reply.status,
                                attempts: max_attempts,
                            }
                        });
                    }
                    std::thread::sleep(Duration::from_millis(backoff));
                }
                Ok(reply) => {
                    return Err(ClientError::Http {
                        status: reply.status,
                        detail: truncate(&reply.body, 200),
                    });
                }
                Err(err) => {
                    let backoff = self.backoff_ms(attempt, is_last);
                    meta.attempts.push(AttemptRecord {
                        status: None,
                        outcome: format!("transport: {err}"),
                        backoff_ms: backoff,
                    });
                    if is_last {
                        return Err(match err {
                            TransportError::Timeout => ClientError::Timeout { attempts: max_attempts },
                            TransportError::Connect(detail) => ClientError::Network {
                                detail,
                                attempts: max_attempts,
                            },
                        });
                    }
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
        unreachable!("retry loop always returns");
    }

    fn backoff_ms(&self, attempt: u32, is_last: bool) -> u64 {
        if is_last {
            0
        } else {
            self.cfg.backoff_initial_ms.saturating_mul(1 << attempt)
        }
    }
}

impl AnswerSource for VlmClient {
    fn answer(&self, request: &PromptRequest) -> Result<ModelAnswer, ClientError> {
        self.query(request)
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

/// Builds a minimal chat-completions response body; shared by tests and the
/// scripted transports.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
    })
    .to_string()
}

//! Batch client for an external inference endpoint.
//!
//! Wire format, one POST per request:
//!
//! ```text
//! request:  {"id": "...", "prompt": "...", "image_base64": "<PNG>"}
//! response: {"id": "...", "answer": "..."}
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Record;
use crate::raster::{RasterImage, REFERENCE_SIZE};

/// Environment variable holding the bearer token.
pub const TOKEN_ENV: &str = "INKPIPE_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Permanent(String),
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("cannot build HTTP client: {0}")]
    Http(#[from] reqwest::Error),
}

#[derive(Debug, Clone)]
pub struct InferenceRequest {
    pub id: String,
    pub prompt: String,
    pub image: RgbImage,
}

impl InferenceRequest {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, image: &RasterImage) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            image: image.to_rgb8(),
        }
    }
}

/// Body sent to the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub prompt: String,
    pub image_base64: String,
}

impl WireRequest {
    pub fn from_request(req: &InferenceRequest) -> Result<Self, TransportError> {
        let mut png = Vec::new();
        req.image
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| TransportError::Permanent(format!("cannot encode image: {e}")))?;
        Ok(Self {
            id: req.id.clone(),
            prompt: req.prompt.clone(),
            image_base64: base64::engine::general_purpose::STANDARD.encode(png),
        })
    }

    pub fn decode_image(&self) -> Result<RgbImage, String> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.image_base64)
            .map_err(|e| e.to_string())?;
        image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map(|i| i.to_rgb8())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "answer")]
    Answer(String),
    #[serde(rename = "error")]
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
    pub attempts: u32,
    pub latency_ms: u64,
}

impl InferenceResponse {
    pub fn answer(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Answer(a) => Some(a),
            Outcome::Error(_) => None,
        }
    }

    pub fn error(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Answer(_) => None,
            Outcome::Error(e) => Some(e),
        }
    }
}

impl Record for InferenceResponse {
    const KIND: &'static str = "answer";
}

fn default_concurrency() -> usize {
    4
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    200
}
fn default_timeout() -> u64 {
    60_000
}
fn default_resolution() -> u32 {
    REFERENCE_SIZE
}
fn default_token_env() -> String {
    TOKEN_ENV.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    #[serde(default)]
    pub url: String,
    /// Name of the environment variable holding the token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    /// Maximum requests in flight.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// Delay before the first retry; doubles on each further retry.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Required image side in pixels.
    #[serde(default = "default_resolution")]
    pub resolution: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            token_env: default_token_env(),
            concurrency: default_concurrency(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
            timeout_ms: default_timeout(),
            resolution: default_resolution(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.concurrency == 0 {
            return Err(ClientError::Config("concurrency must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(ClientError::Config("max_attempts must be at least 1".into()));
        }
        if self.resolution == 0 {
            return Err(ClientError::Config("resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Sends one request body and returns the answer text.
pub trait Transport: Sync {
    fn call(&self, req: &WireRequest) -> Result<String, TransportError>;
}

impl<F> Transport for F
where
    F: Fn(&WireRequest) -> Result<String, TransportError> + Sync,
{
    fn call(&self, req: &WireRequest) -> Result<String, TransportError> {
        self(req)
    }
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
}

impl HttpTransport {
    /// Reads the token from `cfg.token_env`; a missing variable sends no
    /// Authorization header.
    pub fn new(cfg: &EndpointConfig) -> Result<Self, ClientError> {
        if cfg.url.is_empty() {
            return Err(ClientError::Config("endpoint url is not set".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()?;
        Ok(Self {
            client,
            url: cfg.url.clone(),
            token: std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty()),
        })
    }
}

impl Transport for HttpTransport {
    fn call(&self, req: &WireRequest) -> Result<String, TransportError> {
        let mut builder = self.client.post(&self.url).json(req);
        if let Some(t) = &self.token {
            builder = builder.bearer_auth(t);
        }
        let resp = builder.send().map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TransportError::Permanent(format!("HTTP {status}: {}", body.trim())));
        }
        let body: WireResponse = resp
            .json()
            .map_err(|e| TransportError::Permanent(format!("bad response body: {e}")))?;
        if body.id != req.id {
            return Err(TransportError::Permanent(format!(
                "response id '{}' does not match request '{}'",
                body.id, req.id
            )));
        }
        Ok(body.answer)
    }
}

fn run_one(req: &InferenceRequest, transport: &dyn Transport, cfg: &EndpointConfig) -> InferenceResponse {
    let start = Instant::now();
    let respond = |outcome, attempts| InferenceResponse {
        id: req.id.clone(),
        outcome,
        attempts,
        latency_ms: start.elapsed().as_millis() as u64,
    };
    let (w, h) = req.image.dimensions();
    if (w, h) != (cfg.resolution, cfg.resolution) {
        let msg = format!("image is {w}x{h}, endpoint expects {0}x{0}", cfg.resolution);
        return respond(Outcome::Error(msg), 0);
    }
    let wire = match WireRequest::from_request(req) {
        Ok(w) => w,
        Err(e) => return respond(Outcome::Error(e.to_string()), 0),
    };
    let mut attempt = 0;
    loop {
        attempt += 1;
        match transport.call(&wire) {
            Ok(answer) => return respond(Outcome::Answer(answer), attempt),
            Err(TransportError::Transient(_)) if attempt < cfg.max_attempts => {
                let delay = cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(20));
                std::thread::sleep(Duration::from_millis(delay));
            }
            Err(e) => return respond(Outcome::Error(e.to_string()), attempt),
        }
    }
}

/// Runs every request with at most `cfg.concurrency` in flight. Failures are
/// recorded per response; the output has one response per request, sorted by
/// id (ties keep request order).
pub fn infer_batch(
    reqs: &[InferenceRequest],
    transport: &dyn Transport,
    cfg: &EndpointConfig,
) -> Vec<InferenceResponse> {
    let slots: Vec<Mutex<Option<InferenceResponse>>> = reqs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.concurrency.max(1).min(reqs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = reqs.get(i) else { break };
                let r = run_one(req, transport, cfg);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let mut out: Vec<InferenceResponse> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

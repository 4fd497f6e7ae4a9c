//! HTTP clients for an OpenAI-compatible chat endpoint and a JSON
//! text-to-image inference endpoint.

use async_trait::async_trait;
use base64::Engine as _;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use super::transport::{HttpRequest, HttpResponse, HttpTransport, Method, TransportError};
use super::{ChatProvider, ChatRequest, ImageProvider, ImageRequest, ImageResult, ProviderError, ProviderStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt; `max_retries + 1` attempts at most.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::from_millis(250),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    pub fn backoff(&self, retry: u32) -> Duration {
        let base = self.initial_backoff.as_secs_f64() * self.multiplier.powi(retry as i32);
        Duration::from_secs_f64(base.min(self.max_backoff.as_secs_f64()))
    }
}

enum Attempt {
    Retryable(String),
    Fatal(ProviderError),
}

fn classify_status(response: &HttpResponse) -> Option<Attempt> {
    let status = response.status;
    if (200..300).contains(&status) {
        return None;
    }
    let message = String::from_utf8_lossy(&response.body)
        .chars()
        .take(300)
        .collect::<String>();
    Some(match status {
        408 | 429 | 500..=599 => Attempt::Retryable(format!("status {status}: {message}")),
        _ => Attempt::Fatal(ProviderError::Rejected { status, message }),
    })
}

/// Sends `request` with retries on transient failures (timeouts, connection
/// errors, 408, 429, 5xx). Other statuses fail immediately.
async fn send_with_retry(
    transport: &dyn HttpTransport,
    request: HttpRequest,
    policy: &RetryPolicy,
) -> Result<HttpResponse, ProviderError> {
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            tokio::time::sleep(policy.backoff(attempt - 1)).await;
        }
        let outcome = match transport.send(request.clone()).await {
            Ok(response) => match classify_status(&response) {
                None => return Ok(response),
                Some(a) => a,
            },
            Err(TransportError::Other(e)) => Attempt::Fatal(ProviderError::Unavailable(e)),
            Err(e) => Attempt::Retryable(e.to_string()),
        };
        match outcome {
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retryable(msg) => {
                tracing::warn!(url = %request.url, attempt, "provider call failed: {msg}");
                last = msg;
            }
        }
    }
    Err(ProviderError::Unavailable(format!(
        "{} attempts failed, last: {last}",
        policy.max_retries + 1
    )))
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// OpenAI-compatible `POST {base}/chat/completions` client.
pub struct OpenAiChat {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
}

impl OpenAiChat {
    pub fn new(
        transport: Arc<dyn HttpTransport>,
        base_url: String,
        api_key: Option<String>,
        model: String,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            transport,
            base_url,
            api_key: api_key.filter(|k| !k.trim().is_empty()),
            model,
            retry,
        }
    }

    fn key(&self) -> Result<&str, ProviderError> {
        self.api_key
            .as_deref()
            .ok_or_else(|| ProviderError::NotConfigured("MM_CHAT_API_KEY is not set".into()))
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.prompt.role_preamble},
                {"role": "user", "content": request.prompt.body},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

#[async_trait]
impl ChatProvider for OpenAiChat {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = self.key()?;
        let http = HttpRequest {
            method: Method::Post,
            url: join_url(&self.base_url, "chat/completions"),
            headers: vec![("Authorization".into(), format!("Bearer {key}"))],
            body: Some(self.request_body(request)),
        };
        let response = send_with_retry(self.transport.as_ref(), http, &self.retry).await?;
        let value: Value = serde_json::from_slice(&response.body).map_err(|e| ProviderError::Rejected {
            status: response.status,
            message: format!("malformed completion body: {e}"),
        })?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Rejected {
                status: response.status,
                message: "completion has no choices[0].message.content".into(),
            })
    }

    async fn health(&self) -> ProviderStatus {
        let key = match self.key() {
            Ok(k) => k,
            Err(e) => return ProviderStatus::NotConfigured(e.to_string()),
        };
        let http = HttpRequest {
            method: Method::Get,
            url: join_url(&self.base_url, "models"),
            headers: vec![("Authorization".into(), format!("Bearer {key}"))],
            body: None,
        };
        probe(self.transport.as_ref(), http).await
    }
}

async fn probe(transport: &dyn HttpTransport, request: HttpRequest) -> ProviderStatus {
    match transport.send(request).await {
        Ok(r) if (200..300).contains(&r.status) => ProviderStatus::Reachable,
        Ok(r) => ProviderStatus::Degraded(format!("health probe answered {}", r.status)),
        Err(e) => ProviderStatus::Degraded(e.to_string()),
    }
}

/// Text-to-image client for `POST {base}/generate`.
///
/// Request fields: `prompt`, `width`, `height`, `num_inference_steps`, and
/// when set `seed`, `negative_prompt`, `guidance_scale`, `sampler`. The
/// response is either raw `image/*` bytes or JSON carrying a base64 image in
/// `image`, `image_base64` or `images[0]`.
pub struct HttpImageProvider {
    transport: Arc<dyn HttpTransport>,
    base_url: Option<String>,
    retry: RetryPolicy,
}

impl HttpImageProvider {
    pub fn new(transport: Arc<dyn HttpTransport>, base_url: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            transport,
            base_url: base_url.filter(|u| !u.trim().is_empty()),
            retry,
        }
    }

    fn base(&self) -> Result<&str, ProviderError> {
        self.base_url
            .as_deref()
            .ok_or_else(|| ProviderError::NotConfigured("MM_IMAGE_BASE_URL is not set".into()))
    }

    pub fn request_body(request: &ImageRequest) -> Value {
        let mut body = json!({
            "prompt": request.prompt.full,
            "width": request.width,
            "height": request.height,
            "num_inference_steps": request.steps,
        });
        let map = body.as_object_mut().expect("object literal");
        if let Some(seed) = request.seed {
            map.insert("seed".into(), json!(seed));
        }
        let opts = &request.options;
        if let Some(n) = &opts.negative_prompt {
            map.insert("negative_prompt".into(), json!(n));
        }
        if let Some(g) = opts.guidance_scale {
            map.insert("guidance_scale".into(), json!(g));
        }
        if let Some(s) = &opts.sampler {
            map.insert("sampler".into(), json!(s));
        }
        body
    }
}

pub(crate) fn decode_image_payload(response: &HttpResponse) -> Result<Vec<u8>, ProviderError> {
    let is_image = response
        .content_type
        .as_deref()
        .is_some_and(|ct| ct.starts_with("image/"));
    if is_image {
        return Ok(response.body.clone());
    }
    let value: Value = serde_json::from_slice(&response.body)
        .map_err(|e| ProviderError::BadImagePayload(format!("neither image bytes nor JSON: {e}")))?;
    let encoded = value["image"]
        .as_str()
        .or_else(|| value["image_base64"].as_str())
        .or_else(|| value["images"][0].as_str())
        .ok_or_else(|| ProviderError::BadImagePayload("no image field in response".into()))?;
    let encoded = match encoded.split_once(";base64,") {
        Some((_, data)) => data,
        None => encoded,
    };
    base64::engine::general_purpose::STANDARD
        .decode(encoded.trim())
        .map_err(|e| ProviderError::BadImagePayload(format!("invalid base64: {e}")))
}

#[async_trait]
impl ImageProvider for HttpImageProvider {
    async fn generate(&self, request: &ImageRequest) -> Result<ImageResult, ProviderError> {
        let base = self.base()?;
        let http = HttpRequest {
            method: Method::Post,
            url: join_url(base, "generate"),
            headers: Vec::new(),
            body: Some(Self::request_body(request)),
        };
        let response = send_with_retry(self.transport.as_ref(), http, &self.retry).await?;
        let bytes = decode_image_payload(&response)?;
        let mut meta = BTreeMap::new();
        meta.insert("provider".into(), "http".into());
        meta.insert("endpoint".into(), join_url(base, "generate"));
        Ok(ImageResult::new(bytes, meta))
    }

    async fn health(&self) -> ProviderStatus {
        let base = match self.base() {
            Ok(b) => b,
            Err(e) => return ProviderStatus::NotConfigured(e.to_string()),
        };
        let http = HttpRequest {
            method: Method::Get,
            url: join_url(base, "health"),
            headers: Vec::new(),
            body: None,
        };
        probe(self.transport.as_ref(), http).await
    }
}

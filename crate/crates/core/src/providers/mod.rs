//! Chat-completion and text-to-image providers.
//!
//! [`ChatProvider`] and [`ImageProvider`] are the raw clients (live HTTP or
//! mock). [`Providers`] wraps a pair of them with the request deadline, the
//! per-provider concurrency cap and the image payload checks; the rest of
//! the crate only talks to `Providers`.

pub mod live;
pub mod mock;
pub mod transport;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;
use tokio::sync::Semaphore;

use crate::engine::PromptText;
use crate::error::{Error, ErrorCode, Result};
use crate::story::ImageRef;

pub use live::{HttpImageProvider, OpenAiChat, RetryPolicy};
pub use mock::{FaultPlan, Faulty, MockChat, MockImage};
pub use transport::{HttpTransport, RecordingTransport, ReqwestTransport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider did not answer within the deadline")]
    Timeout,
    #[error("provider rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider not configured: {0}")]
    NotConfigured(String),
    #[error("bad image payload: {0}")]
    BadImagePayload(String),
}

impl ProviderError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProviderError::Timeout => ErrorCode::ProviderTimeout,
            ProviderError::Rejected { .. } => ErrorCode::ProviderRejected,
            ProviderError::Unavailable(_) => ErrorCode::ProviderUnavailable,
            ProviderError::NotConfigured(_) => ErrorCode::NotConfigured,
            ProviderError::BadImagePayload(_) => ErrorCode::BadImagePayload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatPurpose {
    Suggestion,
    Depiction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: PromptText,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Not sent over the wire; lets mocks pick a fixture.
    pub purpose: ChatPurpose,
}

/// Optional diffusion settings passed through verbatim when set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub prompt: PromptText,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub options: ImageOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub image_ref: ImageRef,
    pub bytes: Vec<u8>,
    pub provider_meta: BTreeMap<String, String>,
}

impl ImageResult {
    pub fn new(bytes: Vec<u8>, provider_meta: BTreeMap<String, String>) -> Self {
        Self {
            image_ref: ImageRef::from_bytes(&bytes),
            bytes,
            provider_meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum ProviderStatus {
    /// Configured; reachability not probed.
    Configured,
    Reachable,
    Degraded(String),
    NotConfigured(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub chat: ProviderStatus,
    pub image: ProviderStatus,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
    async fn health(&self) -> ProviderStatus;
}

#[async_trait]
pub trait ImageProvider: Send + Sync {
    async fn generate(&self, request: &ImageRequest) -> Result<ImageResult, ProviderError>;
    async fn health(&self) -> ProviderStatus;
}

#[async_trait]
impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        (**self).complete(request).await
    }
    async fn health(&self) -> ProviderStatus {
        (**self).health().await
    }
}

#[async_trait]
impl<T: ImageProvider + ?Sized> ImageProvider for Arc<T> {
    async fn generate(&self, request: &ImageRequest) -> Result<ImageResult, ProviderError> {
        (**self).generate(request).await
    }
    async fn health(&self) -> ProviderStatus {
        (**self).health().await
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Live,
    Mock,
}

impl FromStr for ProviderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(ProviderMode::Live),
            "mock" => Ok(ProviderMode::Mock),
            other => Err(Error::InvalidRequest(format!(
                "provider mode must be live or mock, got {other:?}"
            ))),
        }
    }
}

pub const DEFAULT_CHAT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub chat_mode: ProviderMode,
    pub image_mode: ProviderMode,
    pub chat_base_url: String,
    pub chat_api_key: Option<String>,
    pub chat_model: String,
    pub image_base_url: Option<String>,
    /// Total time allowed for one provider call, retries included.
    pub deadline: Duration,
    pub retry: RetryPolicy,
    /// Maximum in-flight requests per provider.
    pub concurrency: usize,
    /// Extra mock chat fixtures, loaded on top of the built-in ones.
    pub chat_fixtures: Option<PathBuf>,
    pub image_options: ImageOptions,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            chat_mode: ProviderMode::Mock,
            image_mode: ProviderMode::Mock,
            chat_base_url: DEFAULT_CHAT_BASE_URL.into(),
            chat_api_key: None,
            chat_model: DEFAULT_CHAT_MODEL.into(),
            image_base_url: None,
            deadline: DEFAULT_DEADLINE,
            retry: RetryPolicy::default(),
            concurrency: 4,
            chat_fixtures: None,
            image_options: ImageOptions::default(),
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Reads `MM_*` variables through `lookup`. `MM_PROVIDER_MODE` sets both
    /// providers; `MM_CHAT_MODE` / `MM_IMAGE_MODE` override one side.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        let mut cfg = Self::default();
        if let Some(mode) = get("MM_PROVIDER_MODE") {
            let mode: ProviderMode = mode.parse()?;
            cfg.chat_mode = mode;
            cfg.image_mode = mode;
        }
        if let Some(mode) = get("MM_CHAT_MODE") {
            cfg.chat_mode = mode.parse()?;
        }
        if let Some(mode) = get("MM_IMAGE_MODE") {
            cfg.image_mode = mode.parse()?;
        }
        if let Some(url) = get("MM_CHAT_BASE_URL") {
            cfg.chat_base_url = url;
        }
        cfg.chat_api_key = get("MM_CHAT_API_KEY");
        if let Some(model) = get("MM_CHAT_MODEL") {
            cfg.chat_model = model;
        }
        cfg.image_base_url = get("MM_IMAGE_BASE_URL");
        if let Some(secs) = get("MM_REQUEST_DEADLINE_SECS") {
            let secs: f64 = secs.trim().parse().map_err(|_| {
                Error::InvalidRequest(format!("MM_REQUEST_DEADLINE_SECS is not a number: {secs:?}"))
            })?;
            if !(secs.is_finite() && secs > 0.0) {
                return Err(Error::InvalidRequest(
                    "MM_REQUEST_DEADLINE_SECS must be positive".into(),
                ));
            }
            cfg.deadline = Duration::from_secs_f64(secs);
        }
        cfg.chat_fixtures = get("MM_CHAT_FIXTURES").map(PathBuf::from);
        cfg.image_options.negative_prompt = get("MM_IMAGE_NEGATIVE_PROMPT");
        if let Some(g) = get("MM_IMAGE_GUIDANCE_SCALE") {
            cfg.image_options.guidance_scale = Some(g.trim().parse().map_err(|_| {
                Error::InvalidRequest(format!("MM_IMAGE_GUIDANCE_SCALE is not a number: {g:?}"))
            })?);
        }
        cfg.image_options.sampler = get("MM_IMAGE_SAMPLER");
        Ok(cfg)
    }
}

/// The pair of providers used by the studio, with deadline and concurrency
/// enforcement.
#[derive(Clone)]
pub struct Providers {
    chat: Arc<dyn ChatProvider>,
    image: Arc<dyn ImageProvider>,
    deadline: Duration,
    chat_permits: Arc<Semaphore>,
    image_permits: Arc<Semaphore>,
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers")
            .field("deadline", &self.deadline)
            .finish_non_exhaustive()
    }
}

impl Providers {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        image: Arc<dyn ImageProvider>,
        deadline: Duration,
        concurrency: usize,
    ) -> Self {
        let permits = concurrency.max(1);
        Self {
            chat,
            image,
            deadline,
            chat_permits: Arc::new(Semaphore::new(permits)),
            image_permits: Arc::new(Semaphore::new(permits)),
        }
    }

    /// Deterministic offline providers.
    pub fn mock() -> Self {
        Self::new(
            Arc::new(MockChat::builtin()),
            Arc::new(MockImage::new()),
            DEFAULT_DEADLINE,
            4,
        )
    }

    pub fn from_config(cfg: &ProviderConfig) -> Result<Self> {
        let transport: Arc<dyn HttpTransport> = Arc::new(ReqwestTransport::new(cfg.deadline));
        Self::from_config_with_transport(cfg, transport)
    }

    /// Like [`from_config`](Self::from_config) with a caller-supplied HTTP
    /// transport for the live providers.
    pub fn from_config_with_transport(
        cfg: &ProviderConfig,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self> {
        let chat: Arc<dyn ChatProvider> = match cfg.chat_mode {
            ProviderMode::Mock => {
                let mut mock = MockChat::builtin();
                if let Some(dir) = &cfg.chat_fixtures {
                    mock = mock.with_fixture_dir(dir)?;
                }
                Arc::new(mock)
            }
            ProviderMode::Live => Arc::new(OpenAiChat::new(
                transport.clone(),
                cfg.chat_base_url.clone(),
                cfg.chat_api_key.clone(),
                cfg.chat_model.clone(),
                cfg.retry.clone(),
            )),
        };
        let image: Arc<dyn ImageProvider> = match cfg.image_mode {
            ProviderMode::Mock => Arc::new(MockImage::new()),
            ProviderMode::Live => Arc::new(HttpImageProvider::new(
                transport,
                cfg.image_base_url.clone(),
                cfg.retry.clone(),
            )),
        };
        Ok(Self::new(chat, image, cfg.deadline, cfg.concurrency))
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn deadline(&self) -> Duration {
        self.deadline
    }

    pub async fn chat_complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let work = async {
            let _permit = self
                .chat_permits
                .acquire()
                .await
                .map_err(|_| ProviderError::Unavailable("chat provider shut down".into()))?;
            self.chat.complete(request).await
        };
        tokio::time::timeout(self.deadline, work)
            .await
            .map_err(|_| ProviderError::Timeout)?
    }

    /// Generates an image and checks that it decodes to the requested size.
    pub async fn generate_image(&self, request: &ImageRequest) -> Result<ImageResult, ProviderError> {
        let work = async {
            let _permit = self
                .image_permits
                .acquire()
                .await
                .map_err(|_| ProviderError::Unavailable("image provider shut down".into()))?;
            self.image.generate(request).await
        };
        let result = tokio::time::timeout(self.deadline, work)
            .await
            .map_err(|_| ProviderError::Timeout)??;
        let (w, h) = image_dimensions(&result.bytes)?;
        if (w, h) != (request.width, request.height) {
            return Err(ProviderError::BadImagePayload(format!(
                "expected {}x{}, got {w}x{h}",
                request.width, request.height
            )));
        }
        Ok(result)
    }

    /// Probes both providers without changing any state.
    pub async fn health_check(&self) -> HealthReport {
        let probe = self.deadline.min(Duration::from_secs(10));
        let timed = |status: Option<ProviderStatus>| {
            status.unwrap_or_else(|| ProviderStatus::Degraded("health probe timed out".into()))
        };
        let (chat, image) = tokio::join!(
            tokio::time::timeout(probe, self.chat.health()),
            tokio::time::timeout(probe, self.image.health()),
        );
        HealthReport {
            chat: timed(chat.ok()),
            image: timed(image.ok()),
        }
    }
}

pub(crate) fn image_dimensions(bytes: &[u8]) -> Result<(u32, u32), ProviderError> {
    image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ProviderError::BadImagePayload(e.to_string()))?
        .into_dimensions()
        .map_err(|e| ProviderError::BadImagePayload(e.to_string()))
}

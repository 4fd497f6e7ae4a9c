//! HTTP/JSON API over [`mm_core::Studio`].
//!
//! Every failing request answers with an [`ApiError`] body and a status
//! derived from its code.

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Request, State};
use axum::middleware::Next;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::future::{Future, IntoFuture};
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;
use tower_http::cors::{AllowOrigin, CorsLayer};

use mm_core::layout::ItemEdit;
use mm_core::providers::HealthReport;
use mm_core::{ApiError, Error, ErrorCode, FilterRequest, ImageRef, MeaningType, SceneId, SceneKind, ScenePatch, Story, StoryId, Studio};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_DRAIN: Duration = Duration::from_secs(30);

/// HTTP status for each error code.
pub fn status_for(code: ErrorCode) -> StatusCode {
    use ErrorCode::*;
    match code {
        UnknownStory | UnknownScene | UnknownGeneration | UnknownImage => StatusCode::NOT_FOUND,
        EmptyTitle | PositionOutOfRange | InvalidSpec | InvalidHex | InvalidFilter | OutOfBounds
        | InvalidRequest => StatusCode::BAD_REQUEST,
        NotMetaphorical | OrderViolation => StatusCode::CONFLICT,
        MissingSpec | UndecodableImage | EmptyImage | EmptyPalette | UnsupportedSchema
        | CorruptBundle => StatusCode::UNPROCESSABLE_ENTITY,
        UnparseableResponse | ProviderRejected | BadImagePayload => StatusCode::BAD_GATEWAY,
        ProviderUnavailable | NotConfigured => StatusCode::SERVICE_UNAVAILABLE,
        ProviderTimeout => StatusCode::GATEWAY_TIMEOUT,
        TemplateError | IoFailure => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Error wrapper turning domain errors into JSON responses.
#[derive(Debug)]
pub struct AppError(pub ApiError);

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        AppError(e.to_api_error())
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (status_for(self.0.code), Json(self.0)).into_response()
    }
}

fn bad_request(message: impl Into<String>) -> AppError {
    AppError(Error::InvalidRequest(message.into()).to_api_error())
}

type ApiResult<T> = std::result::Result<T, AppError>;

/// JSON body extractor whose rejections are [`ApiError`]s. An empty body
/// deserializes as `{}` so optional request objects may be omitted.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = AppError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| bad_request(e.body_text()))?;
        let text: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) {
            b"{}"
        } else {
            &bytes
        };
        serde_json::from_slice(text)
            .map(ApiJson)
            .map_err(|e| bad_request(format!("invalid JSON body: {e}")))
    }
}

fn parse_id<T: FromStr>(what: &str, raw: &str) -> ApiResult<T> {
    raw.parse()
        .map_err(|_| bad_request(format!("malformed {what} id: {raw:?}")))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CreateStory {
    Import(Box<Story>),
    New { title: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AddSceneBody {
    kind: SceneKind,
    #[serde(default)]
    position: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestionBody {
    #[serde(default)]
    meaning_type: Option<MeaningType>,
    #[serde(default)]
    count: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuggestionList {
    pub suggestions: Vec<mm_core::MetaphorSuggestion>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationBody {
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutBody {
    #[serde(default)]
    items: Vec<ItemEdit>,
    #[serde(default)]
    axis_y: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub providers: HealthReport,
}

type AppState = State<Arc<Studio>>;

async fn create_story(State(studio): AppState, ApiJson(body): ApiJson<CreateStory>) -> ApiResult<impl IntoResponse> {
    let story = match body {
        CreateStory::Import(story) => studio.import_story(*story).await?,
        CreateStory::New { title } => studio.create_story(&title).await?,
    };
    Ok((StatusCode::CREATED, Json(story)))
}

async fn list_stories(State(studio): AppState) -> impl IntoResponse {
    Json(studio.list_stories())
}

async fn get_story(State(studio): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(studio.story(parse_id::<StoryId>("story", &id)?)?))
}

async fn add_scene(
    State(studio): AppState,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<AddSceneBody>,
) -> ApiResult<impl IntoResponse> {
    let scene = studio
        .add_scene(parse_id("story", &id)?, body.kind, body.position)
        .await?;
    Ok((StatusCode::CREATED, Json(scene)))
}

async fn patch_scene(
    State(studio): AppState,
    Path(id): Path<String>,
    ApiJson(patch): ApiJson<ScenePatch>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(studio.patch_scene(parse_id("scene", &id)?, patch).await?))
}

async fn delete_scene(State(studio): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(studio.delete_scene(parse_id("scene", &id)?).await?))
}

async fn suggestions(
    State(studio): AppState,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<SuggestionBody>,
) -> ApiResult<impl IntoResponse> {
    let suggestions = studio
        .request_suggestions(parse_id("scene", &id)?, body.meaning_type, body.count)
        .await?;
    Ok(Json(SuggestionList { suggestions }))
}

async fn generate(
    State(studio): AppState,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<GenerationBody>,
) -> ApiResult<impl IntoResponse> {
    let record = studio
        .request_generation(parse_id("scene", &id)?, body.seed)
        .await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn accept(
    State(studio): AppState,
    Path((id, gid)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let outcome = studio
        .finalize_acceptance(parse_id("scene", &id)?, parse_id("generation", &gid)?)
        .await?;
    Ok(Json(outcome))
}

async fn display(
    State(studio): AppState,
    Path((id, gid)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let scene = studio
        .switch_display(parse_id("scene", &id)?, parse_id("generation", &gid)?)
        .await?;
    Ok(Json(scene))
}

async fn palette(State(studio): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(studio.palette(parse_id::<SceneId>("scene", &id)?)?))
}

async fn set_filter(
    State(studio): AppState,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<FilterRequest>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(studio.set_filter(parse_id("scene", &id)?, body).await?))
}

async fn edit_layout(
    State(studio): AppState,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<LayoutBody>,
) -> ApiResult<impl IntoResponse> {
    let layout = studio
        .edit_layout(parse_id("story", &id)?, &body.items, body.axis_y)
        .await?;
    Ok(Json(layout))
}

async fn playback(State(studio): AppState, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(studio.playback(parse_id("story", &id)?)?))
}

async fn image(State(studio): AppState, Path(raw): Path<String>) -> ApiResult<impl IntoResponse> {
    let image_ref: ImageRef = raw
        .parse()
        .map_err(|_| AppError(Error::UnknownImage(raw.clone()).to_api_error()))?;
    let (bytes, media_type) = studio.image(&image_ref)?;
    Ok((
        [
            (header::CONTENT_TYPE, media_type),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes,
    ))
}

async fn healthz(State(studio): AppState) -> impl IntoResponse {
    Json(Health {
        status: "ok".into(),
        providers: studio.health().await,
    })
}

async fn fallback() -> AppError {
    AppError(ApiError {
        code: ErrorCode::InvalidRequest,
        message: "no such endpoint".into(),
        retryable: false,
    })
}

/// The endpoint table.
pub fn router(studio: Arc<Studio>) -> Router {
    Router::new()
        .route("/stories", post(create_story).get(list_stories))
        .route("/stories/{id}", get(get_story))
        .route("/stories/{id}/scenes", post(add_scene))
        .route("/stories/{id}/layout", put(edit_layout))
        .route("/stories/{id}/playback", get(playback))
        .route("/scenes/{id}", axum::routing::patch(patch_scene).delete(delete_scene))
        .route("/scenes/{id}/suggestions", post(suggestions))
        .route("/scenes/{id}/generations", post(generate))
        .route("/scenes/{id}/generations/{gid}/accept", post(accept))
        .route("/scenes/{id}/display/{gid}", post(display))
        .route("/scenes/{id}/palette", get(palette))
        .route("/scenes/{id}/filter", put(set_filter))
        .route("/images/{ref}", get(image))
        .route("/healthz", get(healthz))
        .fallback(fallback)
        .with_state(studio)
}

/// CORS for the UI. An empty list or `*` allows any origin.
pub fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() || origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(
            origins
                .iter()
                .filter_map(|o| HeaderValue::from_str(o).ok()),
        )
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::PUT, Method::PATCH, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE])
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub cors_origins: Vec<String>,
    /// How long in-flight requests may run after a shutdown signal.
    pub drain: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.parse().expect("valid default bind address"),
            cors_origins: Vec::new(),
            drain: DEFAULT_DRAIN,
        }
    }
}

pub fn app(studio: Arc<Studio>, cfg: &ServerConfig) -> Router {
    router(studio).layer(cors(&cfg.cors_origins))
}

/// Answers with a retryable error instead of the handler's response once
/// the drain deadline has passed. Dropping the handler is safe: story
/// writes are atomic and a half-finished generation records nothing.
async fn abandon_after_deadline(
    State(mut abandon): State<tokio::sync::watch::Receiver<bool>>,
    req: Request,
    next: Next,
) -> Response {
    tokio::select! {
        response = next.run(req) => response,
        _ = abandon.wait_for(|gone| *gone) => AppError(ApiError {
            code: ErrorCode::ProviderUnavailable,
            message: "server is shutting down; retry the request".into(),
            retryable: true,
        })
        .into_response(),
    }
}

/// Serves on an already bound listener until `shutdown` resolves, then
/// lets in-flight requests finish for at most `drain`. Requests still
/// running after that get a retryable error.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
    drain: Duration,
) -> std::io::Result<()> {
    let (stop_tx, mut stop_rx) = tokio::sync::watch::channel(false);
    let (abandon_tx, abandon_rx) = tokio::sync::watch::channel(false);
    let signal = async move {
        shutdown.await;
        let _ = stop_tx.send(true);
    };
    let app = app.layer(axum::middleware::from_fn_with_state(abandon_rx, abandon_after_deadline));
    let server = axum::serve(listener, app)
        .with_graceful_shutdown(signal)
        .into_future();
    tokio::pin!(server);
    let deadline = async move {
        let _ = stop_rx.wait_for(|stopping| *stopping).await;
        tokio::time::sleep(drain).await;
    };
    tokio::select! {
        result = &mut server => return result,
        () = deadline => {}
    }
    tracing::warn!(?drain, "drain deadline passed; abandoning in-flight requests");
    let _ = abandon_tx.send(true);
    // Give the abandoned requests a moment to flush their error responses.
    tokio::time::timeout(Duration::from_secs(2), server)
        .await
        .unwrap_or(Ok(()))
}

/// Binds `cfg.bind` and serves until Ctrl-C.
pub async fn serve(studio: Arc<Studio>, cfg: ServerConfig) -> Result<(), BindFailure> {
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| BindFailure(cfg.bind, e))?;
    tracing::info!(addr = %cfg.bind, "listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutdown requested");
    };
    serve_on(listener, app(studio, &cfg), shutdown, cfg.drain)
        .await
        .map_err(|e| BindFailure(cfg.bind, e))
}

#[derive(Debug)]
pub struct BindFailure(pub SocketAddr, pub std::io::Error);

impl std::fmt::Display for BindFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "could not serve on {}: {}", self.0, self.1)
    }
}

impl std::error::Error for BindFailure {}

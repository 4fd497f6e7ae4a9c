use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

use crate::providers::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the studio can report. Each variant maps to exactly one
/// [`ErrorCode`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("story title must not be empty")]
    EmptyTitle,
    #[error("position {position} is outside 0..={len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("scene {0} is literal; metaphor operations need a metaphorical scene")]
    NotMetaphorical(String),
    #[error("invalid metaphor spec: {0}")]
    InvalidSpec(String),
    #[error("scene is missing a metaphor spec: {0}")]
    MissingSpec(String),
    #[error("generation {0} is not part of this scene's history")]
    UnknownGeneration(String),
    #[error("unknown scene {0}")]
    UnknownScene(String),
    #[error("unknown story {0}")]
    UnknownStory(String),
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("anchor order would break: {0}")]
    OrderViolation(String),
    #[error("layout value out of bounds: {0}")]
    OutOfBounds(String),
    #[error("no list items found in provider response")]
    UnparseableResponse,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error("image has no pixels")]
    EmptyImage,
    #[error("palette is empty")]
    EmptyPalette,
    #[error("invalid hex colour {0:?}")]
    InvalidHex(String),
    #[error("invalid colour filter: {0}")]
    InvalidFilter(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("i/o failure at {path}: {message}")]
    IoFailure { path: PathBuf, message: String },
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("bundle schema version {found} is newer than supported version {supported}")]
    UnsupportedSchema { found: u32, supported: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, err: impl fmt::Display) -> Self {
        Error::IoFailure {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            Error::EmptyTitle => ErrorCode::EmptyTitle,
            Error::PositionOutOfRange { .. } => ErrorCode::PositionOutOfRange,
            Error::NotMetaphorical(_) => ErrorCode::NotMetaphorical,
            Error::InvalidSpec(_) => ErrorCode::InvalidSpec,
            Error::MissingSpec(_) => ErrorCode::MissingSpec,
            Error::UnknownGeneration(_) => ErrorCode::UnknownGeneration,
            Error::UnknownScene(_) => ErrorCode::UnknownScene,
            Error::UnknownStory(_) => ErrorCode::UnknownStory,
            Error::UnknownImage(_) => ErrorCode::UnknownImage,
            Error::OrderViolation(_) => ErrorCode::OrderViolation,
            Error::OutOfBounds(_) => ErrorCode::OutOfBounds,
            Error::UnparseableResponse => ErrorCode::UnparseableResponse,
            Error::Provider(p) => p.code(),
            Error::UndecodableImage(_) => ErrorCode::UndecodableImage,
            Error::EmptyImage => ErrorCode::EmptyImage,
            Error::EmptyPalette => ErrorCode::EmptyPalette,
            Error::InvalidHex(_) => ErrorCode::InvalidHex,
            Error::InvalidFilter(_) => ErrorCode::InvalidFilter,
            Error::Template(_) => ErrorCode::TemplateError,
            Error::IoFailure { .. } => ErrorCode::IoFailure,
            Error::CorruptBundle(_) => ErrorCode::CorruptBundle,
            Error::UnsupportedSchema { .. } => ErrorCode::UnsupportedSchema,
            Error::InvalidRequest(_) => ErrorCode::InvalidRequest,
        }
    }

    pub fn to_api_error(&self) -> ApiError {
        let code = self.code();
        ApiError {
            code,
            message: self.to_string(),
            retryable: code.is_retryable(),
        }
    }
}

/// Stable machine-readable error codes. The string forms are part of the
/// HTTP contract and must never be renamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    EmptyTitle,
    PositionOutOfRange,
    NotMetaphorical,
    InvalidSpec,
    MissingSpec,
    UnknownGeneration,
    UnknownScene,
    UnknownStory,
    UnknownImage,
    OrderViolation,
    OutOfBounds,
    UnparseableResponse,
    ProviderTimeout,
    ProviderRejected,
    ProviderUnavailable,
    NotConfigured,
    BadImagePayload,
    UndecodableImage,
    EmptyImage,
    EmptyPalette,
    InvalidHex,
    InvalidFilter,
    TemplateError,
    IoFailure,
    CorruptBundle,
    UnsupportedSchema,
    InvalidRequest,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 27] = [
        ErrorCode::EmptyTitle,
        ErrorCode::PositionOutOfRange,
        ErrorCode::NotMetaphorical,
        ErrorCode::InvalidSpec,
        ErrorCode::MissingSpec,
        ErrorCode::UnknownGeneration,
        ErrorCode::UnknownScene,
        ErrorCode::UnknownStory,
        ErrorCode::UnknownImage,
        ErrorCode::OrderViolation,
        ErrorCode::OutOfBounds,
        ErrorCode::UnparseableResponse,
        ErrorCode::ProviderTimeout,
        ErrorCode::ProviderRejected,
        ErrorCode::ProviderUnavailable,
        ErrorCode::NotConfigured,
        ErrorCode::BadImagePayload,
        ErrorCode::UndecodableImage,
        ErrorCode::EmptyImage,
        ErrorCode::EmptyPalette,
        ErrorCode::InvalidHex,
        ErrorCode::InvalidFilter,
        ErrorCode::TemplateError,
        ErrorCode::IoFailure,
        ErrorCode::CorruptBundle,
        ErrorCode::UnsupportedSchema,
        ErrorCode::InvalidRequest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::EmptyTitle => "empty_title",
            ErrorCode::PositionOutOfRange => "position_out_of_range",
            ErrorCode::NotMetaphorical => "not_metaphorical",
            ErrorCode::InvalidSpec => "invalid_spec",
            ErrorCode::MissingSpec => "missing_spec",
            ErrorCode::UnknownGeneration => "unknown_generation",
            ErrorCode::UnknownScene => "unknown_scene",
            ErrorCode::UnknownStory => "unknown_story",
            ErrorCode::UnknownImage => "unknown_image",
            ErrorCode::OrderViolation => "order_violation",
            ErrorCode::OutOfBounds => "out_of_bounds",
            ErrorCode::UnparseableResponse => "unparseable_response",
            ErrorCode::ProviderTimeout => "provider_timeout",
            ErrorCode::ProviderRejected => "provider_rejected",
            ErrorCode::ProviderUnavailable => "provider_unavailable",
            ErrorCode::NotConfigured => "not_configured",
            ErrorCode::BadImagePayload => "bad_image_payload",
            ErrorCode::UndecodableImage => "undecodable_image",
            ErrorCode::EmptyImage => "empty_image",
            ErrorCode::EmptyPalette => "empty_palette",
            ErrorCode::InvalidHex => "invalid_hex",
            ErrorCode::InvalidFilter => "invalid_filter",
            ErrorCode::TemplateError => "template_error",
            ErrorCode::IoFailure => "io_failure",
            ErrorCode::CorruptBundle => "corrupt_bundle",
            ErrorCode::UnsupportedSchema => "unsupported_schema",
            ErrorCode::InvalidRequest => "invalid_request",
        }
    }

    /// Whether repeating the same request later may succeed.
    pub fn is_retryable(self) -> bool {
        matches!(
            self,
            ErrorCode::ProviderTimeout | ErrorCode::ProviderUnavailable | ErrorCode::IoFailure
        )
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error body returned by every failing HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
}

//! Core of the metaphor story studio: the story model, prompt building,
//! provider clients, palette extraction, layout, bundle storage and the
//! orchestration that ties them together.

pub mod demo;
pub mod engine;
pub mod error;
pub mod layout;
pub mod palette;
pub mod providers;
pub mod store;
pub mod story;
pub mod studio;
#[cfg(feature = "testkit")]
pub mod testkit;

pub use engine::{MetaphorEngine, MetaphorSuggestion, PromptText};
pub use error::{ApiError, Error, ErrorCode, Result};
pub use layout::{ItemEdit, LayoutItem, LayoutState, Offset};
pub use palette::{Color, ColorFilter, FilterOrigin, Palette, PaletteEntry};
pub use providers::{ProviderConfig, ProviderMode, Providers};
pub use store::{BundleReport, BundleStore, PlaybackFrame, PlaybackManifest};
pub use story::{
    BubbleShape, GenerationId, GenerationRecord, ImageRef, MeaningType, MetaphorSpec, Scene,
    SceneId, SceneKind, Story, StoryId, VisualStructure,
};
pub use studio::{FilterRequest, FinalizeOutcome, GenerationSettings, ScenePatch, Studio};

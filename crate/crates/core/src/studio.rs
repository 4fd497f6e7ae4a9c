//! Orchestration of the authoring workflow over the story model, providers
//! and bundle store. Mutations to one story are serialized and persisted
//! before they become visible; provider calls run outside the story lock.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::engine::{parse_suggestions, MetaphorEngine, MetaphorSuggestion, DEFAULT_SUGGESTION_COUNT};
use crate::error::{ApiError, Error, Result};
use crate::layout::{ItemEdit, LayoutState};
use crate::palette::{self, Color, ColorFilter, FilterOrigin, Palette, DEFAULT_K};
use crate::providers::{
    ChatPurpose, ChatRequest, HealthReport, ImageOptions, ImageRequest, ProviderConfig, Providers,
};
use crate::store::{self, BundleStore, PlaybackManifest};
use crate::story::{
    GenerationId, GenerationParams, GenerationRecord, ImageRef, MeaningType, MetaphorSpec, Scene,
    SceneId, SceneKind, Story, StoryId,
};

/// Fixed parameters of every provider request.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSettings {
    pub image: GenerationParams,
    pub image_options: ImageOptions,
    pub suggestion_temperature: f64,
    pub suggestion_max_tokens: u32,
    pub suggestion_count: usize,
    pub depiction_temperature: f64,
    pub depiction_max_tokens: u32,
    pub palette_k: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            image: GenerationParams::default(),
            image_options: ImageOptions::default(),
            suggestion_temperature: 1.0,
            suggestion_max_tokens: 256,
            suggestion_count: DEFAULT_SUGGESTION_COUNT,
            depiction_temperature: 0.7,
            depiction_max_tokens: 200,
            palette_k: DEFAULT_K,
        }
    }
}

impl GenerationSettings {
    pub fn from_config(cfg: &ProviderConfig) -> Self {
        Self {
            image_options: cfg.image_options.clone(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySummary {
    pub id: StoryId,
    pub title: String,
    pub scene_count: usize,
    pub updated_at: chrono::DateTime<chrono::Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePatch {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub metaphor: Option<MetaphorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRequest {
    pub origin: FilterOrigin,
    /// Hex colour, required unless `origin` is `palette_default`.
    #[serde(default)]
    pub color: Option<String>,
}

impl FilterRequest {
    fn into_filter(self) -> Result<Option<ColorFilter>> {
        match (self.origin, self.color) {
            (FilterOrigin::PaletteDefault, _) => Ok(None),
            (origin, Some(hex)) => Ok(Some(ColorFilter {
                color: Color::parse_hex(&hex)?,
                origin,
            })),
            (_, None) => Err(Error::InvalidFilter("color is required".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteView {
    pub scene_id: SceneId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_id: Option<GenerationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Palette>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<ColorFilter>,
}

/// Result of [`Studio::finalize_acceptance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeOutcome {
    pub scene: Scene,
    /// False when the generation had already been accepted.
    pub newly_accepted: bool,
    /// Set when the image and palette were committed but the depiction could
    /// not be produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depiction_error: Option<ApiError>,
}

struct StoryCell {
    writer: tokio::sync::Mutex<()>,
    current: RwLock<Arc<Story>>,
}

impl StoryCell {
    fn new(story: Story) -> Self {
        Self {
            writer: tokio::sync::Mutex::new(()),
            current: RwLock::new(Arc::new(story)),
        }
    }

    fn snapshot(&self) -> Arc<Story> {
        self.current.read().expect("story snapshot lock").clone()
    }
}

pub struct Studio {
    store: BundleStore,
    providers: Providers,
    engine: MetaphorEngine,
    settings: GenerationSettings,
    stories: RwLock<HashMap<StoryId, Arc<StoryCell>>>,
    scene_index: RwLock<HashMap<SceneId, StoryId>>,
}

impl std::fmt::Debug for Studio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Studio")
            .field("root", &self.store.root())
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

impl Studio {
    /// Opens the studio over `store`, loading every valid bundle in it.
    /// Bundles that fail to load are skipped with a warning.
    pub fn open(
        store: BundleStore,
        providers: Providers,
        engine: MetaphorEngine,
        settings: GenerationSettings,
    ) -> Result<Self> {
        let studio = Self {
            store,
            providers,
            engine,
            settings,
            stories: RwLock::default(),
            scene_index: RwLock::default(),
        };
        let (stories, failures) = studio.store.load_all();
        for (path, err) in failures {
            tracing::warn!(path = %path.display(), error = %err, "skipping bundle");
        }
        for story in stories {
            studio.install(story)?;
        }
        Ok(studio)
    }

    /// Mock providers and built-in templates over `data_dir`.
    pub fn mock(data_dir: impl Into<std::path::PathBuf>) -> Result<Self> {
        Self::open(
            BundleStore::open(data_dir)?,
            Providers::mock(),
            MetaphorEngine::default(),
            GenerationSettings::default(),
        )
    }

    pub fn store(&self) -> &BundleStore {
        &self.store
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn engine(&self) -> &MetaphorEngine {
        &self.engine
    }

    pub fn settings(&self) -> &GenerationSettings {
        &self.settings
    }

    fn install(&self, story: Story) -> Result<Arc<Story>> {
        let id = story.id;
        {
            let index = self.scene_index.read().expect("scene index lock");
            if let Some(s) = story
                .scenes
                .iter()
                .find(|s| index.get(&s.id).is_some_and(|owner| *owner != id))
            {
                return Err(Error::InvalidRequest(format!(
                    "scene {} already belongs to another story",
                    s.id
                )));
            }
        }
        let cell = Arc::new(StoryCell::new(story));
        let snapshot = cell.snapshot();
        self.stories.write().expect("story table lock").insert(id, cell);
        self.reindex(&snapshot);
        Ok(snapshot)
    }

    fn reindex(&self, story: &Story) {
        let mut index = self.scene_index.write().expect("scene index lock");
        index.retain(|scene, owner| *owner != story.id || story.contains_scene(*scene));
        for scene in &story.scenes {
            index.insert(scene.id, story.id);
        }
    }

    fn cell(&self, id: StoryId) -> Result<Arc<StoryCell>> {
        self.stories
            .read()
            .expect("story table lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::UnknownStory(id.to_string()))
    }

    /// Applies `f` to a copy of the story, validates and saves the copy, and
    /// only then publishes it. On any error the story is left unchanged.
    async fn mutate<T>(
        &self,
        id: StoryId,
        f: impl FnOnce(&mut Story) -> Result<T>,
    ) -> Result<(T, Arc<Story>)> {
        let cell = self.cell(id)?;
        let _writer = cell.writer.lock().await;
        let mut draft = (*cell.snapshot()).clone();
        let out = f(&mut draft)?;
        self.store.save_story(&draft)?;
        let published = Arc::new(draft);
        *cell.current.write().expect("story snapshot lock") = published.clone();
        self.reindex(&published);
        Ok((out, published))
    }

    pub fn list_stories(&self) -> Vec<StorySummary> {
        let cells: Vec<Arc<StoryCell>> = self
            .stories
            .read()
            .expect("story table lock")
            .values()
            .cloned()
            .collect();
        let mut out: Vec<StorySummary> = cells
            .iter()
            .map(|c| {
                let s = c.snapshot();
                StorySummary {
                    id: s.id,
                    title: s.title.clone(),
                    scene_count: s.scenes.len(),
                    updated_at: s.updated_at,
                }
            })
            .collect();
        out.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then(a.id.0.cmp(&b.id.0)));
        out
    }

    pub fn story(&self, id: StoryId) -> Result<Arc<Story>> {
        Ok(self.cell(id)?.snapshot())
    }

    pub fn story_of_scene(&self, scene: SceneId) -> Result<StoryId> {
        self.scene_index
            .read()
            .expect("scene index lock")
            .get(&scene)
            .copied()
            .ok_or_else(|| Error::UnknownScene(scene.to_string()))
    }

    pub fn scene(&self, scene: SceneId) -> Result<Scene> {
        let story = self.story(self.story_of_scene(scene)?)?;
        story.scene(scene).cloned()
    }

    pub async fn create_story(&self, title: &str) -> Result<Arc<Story>> {
        let story = Story::new(title)?;
        self.store.save_story(&story)?;
        self.install(story)
    }

    /// Stores a complete story, replacing any story with the same id. Its
    /// images must already be in that story's bundle.
    pub async fn import_story(&self, story: Story) -> Result<Arc<Story>> {
        let existing = self.stories.read().expect("story table lock").get(&story.id).cloned();
        match existing {
            Some(_) => {
                let (_, s) = self
                    .mutate(story.id, move |current| {
                        *current = story;
                        Ok(())
                    })
                    .await?;
                Ok(s)
            }
            None => {
                self.store.save_story(&story)?;
                self.install(story)
            }
        }
    }

    /// Adds a scene at `position`, or at the end when none is given.
    pub async fn add_scene(
        &self,
        story: StoryId,
        kind: SceneKind,
        position: Option<usize>,
    ) -> Result<Scene> {
        let (id, s) = self
            .mutate(story, |st| {
                let pos = position.unwrap_or(st.scenes.len());
                st.add_scene(kind, pos)
            })
            .await?;
        s.scene(id).cloned()
    }

    pub async fn patch_scene(&self, scene: SceneId, patch: ScenePatch) -> Result<Scene> {
        let story = self.story_of_scene(scene)?;
        let (_, s) = self
            .mutate(story, |st| {
                if let Some(text) = &patch.text {
                    st.set_text(scene, text)?;
                }
                if let Some(spec) = patch.metaphor {
                    st.set_metaphor_spec(scene, spec)?;
                }
                Ok(())
            })
            .await?;
        s.scene(scene).cloned()
    }

    pub async fn delete_scene(&self, scene: SceneId) -> Result<Arc<Story>> {
        let story = self.story_of_scene(scene)?;
        let (_, s) = self.mutate(story, |st| st.remove_scene(scene)).await?;
        Ok(s)
    }

    /// Asks the chat provider for metaphors for the scene's feeling. Only
    /// the affective element and adjectives of the spec are needed.
    pub async fn request_suggestions(
        &self,
        scene: SceneId,
        meaning: Option<MeaningType>,
        count: Option<usize>,
    ) -> Result<Vec<MetaphorSuggestion>> {
        let current = self.scene(scene)?;
        if !current.is_metaphorical() {
            return Err(Error::NotMetaphorical(scene.to_string()));
        }
        let spec = current
            .metaphor
            .as_ref()
            .ok_or_else(|| Error::MissingSpec("no metaphor spec set".into()))?;
        spec.check_affect()
            .map_err(|e| Error::MissingSpec(e.to_string()))?;
        let count = count.unwrap_or(self.settings.suggestion_count);
        let prompt = self
            .engine
            .suggestion_prompt(spec, meaning.unwrap_or(spec.meaning_type), count)?;
        let request = ChatRequest {
            prompt,
            temperature: self.settings.suggestion_temperature,
            max_tokens: self.settings.suggestion_max_tokens,
            purpose: ChatPurpose::Suggestion,
        };
        let reply = self.providers.chat_complete(&request).await?;
        let mut suggestions = parse_suggestions(&reply)?;
        suggestions.truncate(count);
        Ok(suggestions)
    }

    /// Generates an image for the scene's current spec and appends it to the
    /// history. Nothing is recorded when the provider fails.
    pub async fn request_generation(
        &self,
        scene: SceneId,
        seed: Option<u64>,
    ) -> Result<GenerationRecord> {
        let story = self.story_of_scene(scene)?;
        let current = self.scene(scene)?;
        if !current.is_metaphorical() {
            return Err(Error::NotMetaphorical(scene.to_string()));
        }
        let spec = current
            .metaphor
            .as_ref()
            .ok_or_else(|| Error::MissingSpec("no metaphor spec set".into()))?;
        spec.check_complete()
            .map_err(|e| Error::MissingSpec(e.to_string()))?;
        let prompt = self.engine.image_prompt(spec)?;
        let params = GenerationParams {
            seed,
            ..self.settings.image
        };
        let request = ImageRequest {
            prompt: prompt.clone(),
            width: params.width,
            height: params.height,
            steps: params.steps,
            seed,
            options: self.settings.image_options.clone(),
        };
        let result = self.providers.generate_image(&request).await?;
        let image_ref = self.store.put_image(story, &result.bytes)?;
        let (record, _) = self
            .mutate(story, |st| {
                st.record_generation(scene, &prompt.full, image_ref, params)
            })
            .await?;
        Ok(record)
    }

    /// Accepts a generation, extracts its palette and asks for a depiction.
    ///
    /// Acceptance and palette are committed together. A depiction failure
    /// leaves them in place and is reported in the outcome. Replaying the
    /// call only retries a missing depiction.
    pub async fn finalize_acceptance(
        &self,
        scene: SceneId,
        generation: GenerationId,
    ) -> Result<FinalizeOutcome> {
        let story = self.story_of_scene(scene)?;
        let current = self.scene(scene)?;
        if !current.is_metaphorical() {
            return Err(Error::NotMetaphorical(scene.to_string()));
        }
        let record = current
            .generation(generation)
            .ok_or_else(|| Error::UnknownGeneration(generation.to_string()))?
            .clone();

        let mut newly_accepted = false;
        if !record.accepted {
            let bytes = self.store.read_image(story, &record.image_ref)?;
            let k = self.settings.palette_k;
            let extracted = tokio::task::spawn_blocking(move || palette::extract_palette(&bytes, k))
                .await
                .map_err(|e| Error::InvalidRequest(format!("palette task failed: {e}")))??;
            let (event, _) = self
                .mutate(story, |st| {
                    let event = st.accept_generation(scene, generation)?;
                    if event.newly_accepted {
                        st.attach_palette(scene, generation, extracted)?;
                    }
                    Ok(event)
                })
                .await?;
            newly_accepted = event.newly_accepted;
        }

        let snapshot = self.story(story)?;
        if snapshot.has_depiction_for(scene, generation) {
            return Ok(FinalizeOutcome {
                scene: snapshot.scene(scene)?.clone(),
                newly_accepted,
                depiction_error: None,
            });
        }

        let depiction_error = match self.depict(story, scene, generation).await {
            Ok(()) => None,
            Err(e) => {
                tracing::warn!(%scene, %generation, error = %e, "depiction failed");
                Some(e.to_api_error())
            }
        };
        Ok(FinalizeOutcome {
            scene: self.scene(scene)?,
            newly_accepted,
            depiction_error,
        })
    }

    async fn depict(&self, story: StoryId, scene: SceneId, generation: GenerationId) -> Result<()> {
        let current = self.scene(scene)?;
        let spec = current
            .metaphor
            .as_ref()
            .ok_or_else(|| Error::MissingSpec("no metaphor spec set".into()))?;
        let request = ChatRequest {
            prompt: self.engine.depiction_prompt(spec)?,
            temperature: self.settings.depiction_temperature,
            max_tokens: self.settings.depiction_max_tokens,
            purpose: ChatPurpose::Depiction,
        };
        let text = self.providers.chat_complete(&request).await?;
        if text.trim().is_empty() {
            return Err(Error::UnparseableResponse);
        }
        self.mutate(story, |st| {
            // A concurrent replay may have added it while the provider ran.
            if !st.has_depiction_for(scene, generation) {
                st.add_depiction(scene, generation, &text)?;
            }
            Ok(())
        })
        .await?;
        Ok(())
    }

    pub async fn switch_display(&self, scene: SceneId, generation: GenerationId) -> Result<Scene> {
        let story = self.story_of_scene(scene)?;
        let (_, s) = self
            .mutate(story, |st| st.switch_display(scene, generation))
            .await?;
        s.scene(scene).cloned()
    }

    pub fn palette(&self, scene: SceneId) -> Result<PaletteView> {
        let current = self.scene(scene)?;
        if !current.is_metaphorical() {
            return Err(Error::NotMetaphorical(scene.to_string()));
        }
        let generation_id = current
            .displayed_generation
            .filter(|g| current.palette_for(*g).is_some())
            .or_else(|| current.palettes.last().map(|p| p.generation_id));
        Ok(PaletteView {
            scene_id: scene,
            generation_id,
            palette: current.palette().cloned(),
            filter: current.active_filter(),
        })
    }

    pub async fn set_filter(&self, scene: SceneId, request: FilterRequest) -> Result<Scene> {
        let filter = request.into_filter()?;
        let story = self.story_of_scene(scene)?;
        let (_, s) = self.mutate(story, |st| st.set_filter(scene, filter)).await?;
        s.scene(scene).cloned()
    }

    pub async fn edit_layout(
        &self,
        story: StoryId,
        edits: &[ItemEdit],
        axis_y: Option<f64>,
    ) -> Result<LayoutState> {
        let (_, s) = self.mutate(story, |st| st.edit_layout(edits, axis_y)).await?;
        Ok(s.layout.clone())
    }

    pub fn playback(&self, story: StoryId) -> Result<PlaybackManifest> {
        Ok(store::export_playback(&*self.story(story)?))
    }

    /// Writes the standalone playback file into the story's bundle.
    pub fn export_playback_file(&self, story: StoryId) -> Result<std::path::PathBuf> {
        self.store.write_playback(&*self.story(story)?)
    }

    /// Image bytes and their media type.
    pub fn image(&self, image_ref: &ImageRef) -> Result<(Vec<u8>, &'static str)> {
        let cells: Vec<Arc<StoryCell>> = self
            .stories
            .read()
            .expect("story table lock")
            .values()
            .cloned()
            .collect();
        for cell in cells {
            let story = cell.snapshot();
            if store::referenced_images(&story).contains(image_ref) {
                let bytes = self.store.read_image(story.id, image_ref)?;
                return Ok((bytes, media_type(image_ref, &self.store, story.id)));
            }
        }
        Err(Error::UnknownImage(image_ref.to_string()))
    }

    pub async fn health(&self) -> HealthReport {
        self.providers.health_check().await
    }
}

fn media_type(image_ref: &ImageRef, store: &BundleStore, story: StoryId) -> &'static str {
    let ext = store
        .image_path(story, image_ref)
        .and_then(|p| p.extension().map(|e| e.to_string_lossy().into_owned()));
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("jpg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

//! Story and scene domain model.
//!
//! A [`Story`] is the unit of persistence: an ordered list of scenes plus the
//! storyline layout. Every mutation goes through a method on `Story` so that
//! the scene/layout invariants can be checked in one place
//! ([`Story::violations`]).

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::layout::{ItemEdit, LayoutState, Offset};
use crate::palette::{Color, ColorFilter, FilterOrigin, Palette};

/// Current on-disk and over-the-wire schema version for [`Story`].
pub const SCHEMA_VERSION: u32 = 1;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Uuid);

        impl $name {
            pub fn new() -> Self {
                Self(Uuid::new_v4())
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::new()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = uuid::Error;

            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                Uuid::parse_str(s).map(Self)
            }
        }
    };
}

id_type!(StoryId);
id_type!(SceneId);
id_type!(GenerationId);

/// Content-addressed handle for an encoded image: lowercase hex SHA-256 of
/// the exact bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ImageRef(String);

impl ImageRef {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut hex = String::with_capacity(64);
        for byte in digest.iter() {
            hex.push_str(&format!("{byte:02x}"));
        }
        Self(hex)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ImageRef {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, Self::Error> {
        let valid = value.len() == 64
            && value
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if valid {
            Ok(Self(value))
        } else {
            Err(format!("{value:?} is not a lowercase sha-256 hex digest"))
        }
    }
}

impl From<ImageRef> for String {
    fn from(value: ImageRef) -> Self {
        value.0
    }
}

impl FromStr for ImageRef {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::try_from(s.to_owned())
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Literal,
    Metaphorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleShape {
    Spiky,
    Rounded,
}

/// Semantic relation between the affective element and the metaphor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeaningType {
    Connection,
    Similarity,
    Opposition,
}

impl MeaningType {
    pub const ALL: [MeaningType; 3] = [
        MeaningType::Connection,
        MeaningType::Similarity,
        MeaningType::Opposition,
    ];
}

/// How the two concepts are composed in the generated image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualStructure {
    Juxtaposition,
    Fusion,
    Replacement,
}

impl VisualStructure {
    pub const ALL: [VisualStructure; 3] = [
        VisualStructure::Juxtaposition,
        VisualStructure::Fusion,
        VisualStructure::Replacement,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaphorSpec {
    /// What was affective in the scene, e.g. "old crush holding my hands".
    pub affective_element: String,
    /// One or more words for the feeling. A phrase such as
    /// "thrilling but a bit worrying" counts as a single entry.
    pub adjectives: Vec<String>,
    /// The metaphor to draw. May stay empty until a suggestion is picked.
    #[serde(default)]
    pub metaphor_concept: String,
    pub meaning_type: MeaningType,
    pub visual_structure: VisualStructure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_prompt: Option<String>,
}

impl MetaphorSpec {
    /// The affect-labelling gate: an affective element and at least one
    /// adjective must be present before anything is requested from a provider.
    pub fn check_affect(&self) -> Result<()> {
        if self.affective_element.trim().is_empty() {
            return Err(Error::InvalidSpec("affective_element is empty".into()));
        }
        if self.adjectives.is_empty() {
            return Err(Error::InvalidSpec("adjectives are empty".into()));
        }
        if self.adjectives.iter().any(|a| a.trim().is_empty()) {
            return Err(Error::InvalidSpec("adjectives contain a blank entry".into()));
        }
        Ok(())
    }

    /// [`check_affect`](Self::check_affect) plus a non-empty metaphor concept.
    pub fn check_complete(&self) -> Result<()> {
        self.check_affect()?;
        if self.metaphor_concept.trim().is_empty() {
            return Err(Error::InvalidSpec("metaphor_concept is empty".into()));
        }
        Ok(())
    }

    pub fn adjective_phrase(&self) -> String {
        self.adjectives.join(", ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            steps: 30,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: GenerationId,
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub image_ref: ImageRef,
    pub created_at: DateTime<Utc>,
    pub accepted: bool,
}

/// Generated metaphorical text for one accepted generation. Kept apart from
/// the author's own scene text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Depiction {
    pub generation_id: GenerationId,
    pub text: String,
    pub created_at: DateTime<Utc>,
    pub superseded: bool,
}

/// Palette extracted when a generation was accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedPalette {
    pub generation_id: GenerationId,
    pub palette: Palette,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: SceneId,
    pub kind: SceneKind,
    pub position: usize,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metaphor: Option<MetaphorSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generations: Vec<GenerationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displayed_generation: Option<GenerationId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depictions: Vec<Depiction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub palettes: Vec<AcceptedPalette>,
    /// User-chosen filter only. The palette default is derived on read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<ColorFilter>,
}

impl Scene {
    fn new(kind: SceneKind, position: usize) -> Self {
        Self {
            id: SceneId::new(),
            kind,
            position,
            text: String::new(),
            metaphor: None,
            generations: Vec::new(),
            displayed_generation: None,
            depictions: Vec::new(),
            palettes: Vec::new(),
            filter: None,
        }
    }

    pub fn bubble_shape(&self) -> BubbleShape {
        match self.kind {
            SceneKind::Metaphorical => BubbleShape::Spiky,
            SceneKind::Literal => BubbleShape::Rounded,
        }
    }

    pub fn is_metaphorical(&self) -> bool {
        self.kind == SceneKind::Metaphorical
    }

    pub fn generation(&self, id: GenerationId) -> Option<&GenerationRecord> {
        self.generations.iter().find(|g| g.id == id)
    }

    pub fn displayed(&self) -> Option<&GenerationRecord> {
        self.displayed_generation.and_then(|id| self.generation(id))
    }

    pub fn palette_for(&self, generation: GenerationId) -> Option<&Palette> {
        self.palettes
            .iter()
            .find(|p| p.generation_id == generation)
            .map(|p| &p.palette)
    }

    /// The palette the interface should derive colours from: the displayed
    /// generation's palette when it has one, else the most recently accepted.
    pub fn palette(&self) -> Option<&Palette> {
        self.displayed_generation
            .and_then(|id| self.palette_for(id))
            .or_else(|| self.palettes.last().map(|p| &p.palette))
    }

    /// The user's filter if one was chosen, otherwise the default filter of
    /// [`palette`](Self::palette).
    pub fn active_filter(&self) -> Option<ColorFilter> {
        if let Some(filter) = &self.filter {
            return Some(filter.clone());
        }
        self.palette().and_then(|p| crate::palette::default_filter(p).ok())
    }

    pub fn current_depiction(&self) -> Option<&Depiction> {
        self.depictions.iter().rev().find(|d| !d.superseded)
    }

    /// Author text followed by the current depiction, for display.
    pub fn display_text(&self) -> String {
        match self.current_depiction() {
            Some(d) if self.text.is_empty() => d.text.clone(),
            Some(d) => format!("{}\n\n{}", self.text, d.text),
            None => self.text.clone(),
        }
    }

    fn require_metaphorical(&self) -> Result<()> {
        if self.is_metaphorical() {
            Ok(())
        } else {
            Err(Error::NotMetaphorical(self.id.to_string()))
        }
    }

    fn require_generation(&self, id: GenerationId) -> Result<usize> {
        self.generations
            .iter()
            .position(|g| g.id == id)
            .ok_or_else(|| Error::UnknownGeneration(id.to_string()))
    }
}

/// Outcome of [`Story::accept_generation`]; the caller runs palette
/// extraction and depiction generation from it.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceEvent {
    pub scene_id: SceneId,
    pub generation_id: GenerationId,
    pub image_ref: ImageRef,
    /// False when the generation had already been accepted; nothing changed.
    pub newly_accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub id: StoryId,
    pub title: String,
    pub scenes: Vec<Scene>,
    pub layout: LayoutState,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub schema_version: u32,
}

impl Story {
    pub fn new(title: &str) -> Result<Self> {
        let title = title.trim();
        if title.is_empty() {
            return Err(Error::EmptyTitle);
        }
        let now = Utc::now();
        Ok(Self {
            id: StoryId::new(),
            title: title.to_owned(),
            scenes: Vec::new(),
            layout: LayoutState::default(),
            created_at: now,
            updated_at: now,
            schema_version: SCHEMA_VERSION,
        })
    }

    pub fn scene(&self, id: SceneId) -> Result<&Scene> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownScene(id.to_string()))
    }

    fn scene_mut(&mut self, id: SceneId) -> Result<&mut Scene> {
        self.scenes
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownScene(id.to_string()))
    }

    pub fn contains_scene(&self, id: SceneId) -> bool {
        self.scenes.iter().any(|s| s.id == id)
    }

    /// Metaphorical scene ids in chronological (position) order.
    pub fn metaphorical_order(&self) -> Vec<SceneId> {
        self.scenes
            .iter()
            .filter(|s| s.is_metaphorical())
            .map(|s| s.id)
            .collect()
    }

    fn touch(&mut self) {
        self.updated_at = Utc::now();
    }

    fn renumber(&mut self) {
        for (i, scene) in self.scenes.iter_mut().enumerate() {
            scene.position = i;
        }
    }

    pub fn set_title(&mut self, title: &str) -> Result<()> {
        let title = title.trim();
        if title.is_empty() {
            return Err(Error::EmptyTitle);
        }
        self.title = title.to_owned();
        self.touch();
        Ok(())
    }

    pub fn add_scene(&mut self, kind: SceneKind, position: usize) -> Result<SceneId> {
        if position > self.scenes.len() {
            return Err(Error::PositionOutOfRange {
                position,
                len: self.scenes.len(),
            });
        }
        let scene = Scene::new(kind, position);
        let id = scene.id;
        self.scenes.insert(position, scene);
        self.renumber();
        if kind == SceneKind::Metaphorical {
            let order = self.metaphorical_order();
            self.layout.insert_item(&order, id);
        }
        self.touch();
        Ok(id)
    }

    /// Removes a scene along with its layout item and returns it.
    pub fn remove_scene(&mut self, id: SceneId) -> Result<Scene> {
        let index = self
            .scenes
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::UnknownScene(id.to_string()))?;
        let before = self.metaphorical_order();
        let scene = self.scenes.remove(index);
        self.renumber();
        if scene.is_metaphorical() {
            let after = self.metaphorical_order();
            self.layout.remove_item(&before, &after, id);
        }
        self.touch();
        Ok(scene)
    }

    pub fn set_text(&mut self, id: SceneId, text: &str) -> Result<()> {
        self.scene_mut(id)?.text = text.to_owned();
        self.touch();
        Ok(())
    }

    /// Stores the spec. Earlier generations are kept.
    pub fn set_metaphor_spec(&mut self, id: SceneId, spec: MetaphorSpec) -> Result<()> {
        let scene = self.scene_mut(id)?;
        scene.require_metaphorical()?;
        spec.check_affect()?;
        scene.metaphor = Some(spec);
        self.touch();
        Ok(())
    }

    pub fn record_generation(
        &mut self,
        id: SceneId,
        prompt: &str,
        image_ref: ImageRef,
        params: GenerationParams,
    ) -> Result<GenerationRecord> {
        let scene = self.scene_mut(id)?;
        scene.require_metaphorical()?;
        match &scene.metaphor {
            None => return Err(Error::MissingSpec("no metaphor spec set".into())),
            Some(spec) => spec
                .check_complete()
                .map_err(|e| Error::MissingSpec(e.to_string()))?,
        }
        let record = GenerationRecord {
            id: GenerationId::new(),
            prompt: prompt.to_owned(),
            width: params.width,
            height: params.height,
            steps: params.steps,
            seed: params.seed,
            image_ref,
            created_at: Utc::now(),
            accepted: false,
        };
        scene.generations.push(record.clone());
        self.sync_slots(id);
        self.touch();
        Ok(record)
    }

    /// Marks the generation accepted and displays it. Accepting an already
    /// accepted generation changes nothing.
    pub fn accept_generation(
        &mut self,
        id: SceneId,
        generation: GenerationId,
    ) -> Result<AcceptanceEvent> {
        let scene = self.scene_mut(id)?;
        scene.require_metaphorical()?;
        let index = scene.require_generation(generation)?;
        let record = &mut scene.generations[index];
        let image_ref = record.image_ref.clone();
        if record.accepted {
            return Ok(AcceptanceEvent {
                scene_id: id,
                generation_id: generation,
                image_ref,
                newly_accepted: false,
            });
        }
        record.accepted = true;
        scene.displayed_generation = Some(generation);
        self.sync_slots(id);
        self.touch();
        Ok(AcceptanceEvent {
            scene_id: id,
            generation_id: generation,
            image_ref,
            newly_accepted: true,
        })
    }

    /// Stores the palette extracted for an accepted generation.
    pub fn attach_palette(
        &mut self,
        id: SceneId,
        generation: GenerationId,
        palette: Palette,
    ) -> Result<()> {
        let scene = self.scene_mut(id)?;
        let index = scene.require_generation(generation)?;
        if !scene.generations[index].accepted {
            return Err(Error::InvalidRequest(format!(
                "generation {generation} has not been accepted"
            )));
        }
        match scene.palettes.iter_mut().find(|p| p.generation_id == generation) {
            Some(existing) => existing.palette = palette,
            None => scene.palettes.push(AcceptedPalette {
                generation_id: generation,
                palette,
            }),
        }
        self.touch();
        Ok(())
    }

    /// Appends a depiction for an accepted generation; earlier depictions are
    /// kept but marked superseded.
    pub fn add_depiction(&mut self, id: SceneId, generation: GenerationId, text: &str) -> Result<()> {
        let scene = self.scene_mut(id)?;
        let index = scene.require_generation(generation)?;
        if !scene.generations[index].accepted {
            return Err(Error::InvalidRequest(format!(
                "generation {generation} has not been accepted"
            )));
        }
        for d in &mut scene.depictions {
            d.superseded = true;
        }
        scene.depictions.push(Depiction {
            generation_id: generation,
            text: text.trim().to_owned(),
            created_at: Utc::now(),
            superseded: false,
        });
        self.touch();
        Ok(())
    }

    pub fn has_depiction_for(&self, id: SceneId, generation: GenerationId) -> bool {
        self.scene(id)
            .map(|s| s.depictions.iter().any(|d| d.generation_id == generation))
            .unwrap_or(false)
    }

    /// Changes which generation is displayed. Palettes and filters are left
    /// untouched.
    pub fn switch_display(&mut self, id: SceneId, generation: GenerationId) -> Result<()> {
        let scene = self.scene_mut(id)?;
        scene.require_metaphorical()?;
        scene.require_generation(generation)?;
        if scene.displayed_generation == Some(generation) {
            return Ok(());
        }
        scene.displayed_generation = Some(generation);
        self.sync_slots(id);
        self.touch();
        Ok(())
    }

    /// Sets or clears the user's colour filter. Passing a `PaletteDefault`
    /// filter (or `None`) reverts to the derived default.
    pub fn set_filter(&mut self, id: SceneId, filter: Option<ColorFilter>) -> Result<()> {
        let scene = self.scene_mut(id)?;
        scene.require_metaphorical()?;
        let stored = match filter {
            None => None,
            Some(f) => match f.origin {
                FilterOrigin::PaletteDefault => None,
                FilterOrigin::CustomHex => Some(f),
                FilterOrigin::PalettePick => {
                    let in_palette = scene
                        .palettes
                        .iter()
                        .any(|p| p.palette.contains(&f.color));
                    if !in_palette {
                        return Err(Error::InvalidFilter(format!(
                            "{} is not in any extracted palette of this scene",
                            f.color
                        )));
                    }
                    Some(f)
                }
            },
        };
        scene.filter = stored;
        self.touch();
        Ok(())
    }

    pub fn move_layout_item(&mut self, id: SceneId, anchor_x: f64, offset: Offset) -> Result<()> {
        let order = self.metaphorical_order();
        self.layout.move_item(&order, id, anchor_x, offset)?;
        self.touch();
        Ok(())
    }

    pub fn resize_layout_item(&mut self, id: SceneId, scale: f64) -> Result<f64> {
        let applied = self.layout.resize_item(id, scale)?;
        self.touch();
        Ok(applied)
    }

    /// Applies several item edits at once; the anchor order is checked on the
    /// final state only.
    pub fn edit_layout(&mut self, edits: &[ItemEdit], axis_y: Option<f64>) -> Result<()> {
        let order = self.metaphorical_order();
        self.layout.apply_edits(&order, edits, axis_y)?;
        self.touch();
        Ok(())
    }

    fn sync_slots(&mut self, id: SceneId) {
        if let Some(scene) = self.scenes.iter().find(|s| s.id == id) {
            self.layout.sync_history_slots(scene);
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::CorruptBundle(v)),
        }
    }

    /// Every invariant violation found, as human-readable lines. Empty means
    /// the story is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!(
                "schema_version {} differs from {SCHEMA_VERSION}",
                self.schema_version
            ));
        }
        if self.title.trim().is_empty() {
            out.push("title is empty".into());
        }
        let mut scene_ids = HashSet::new();
        for (i, scene) in self.scenes.iter().enumerate() {
            if scene.position != i {
                out.push(format!(
                    "scene {} has position {} but sits at index {i}",
                    scene.id, scene.position
                ));
            }
            if !scene_ids.insert(scene.id) {
                out.push(format!("scene id {} appears twice", scene.id));
            }
            scene_violations(scene, &mut out);
        }
        out.extend(self.layout.violations(self));
        out
    }
}

fn scene_violations(scene: &Scene, out: &mut Vec<String>) {
    let id = scene.id;
    if scene.kind == SceneKind::Literal {
        let has_metaphor_fields = scene.metaphor.is_some()
            || !scene.generations.is_empty()
            || scene.displayed_generation.is_some()
            || !scene.depictions.is_empty()
            || !scene.palettes.is_empty()
            || scene.filter.is_some();
        if has_metaphor_fields {
            out.push(format!("literal scene {id} carries metaphor fields"));
        }
        return;
    }

    if let Some(spec) = &scene.metaphor {
        if let Err(e) = spec.check_affect() {
            out.push(format!("scene {id}: {e}"));
        }
    }
    if !scene.generations.is_empty() && scene.metaphor.is_none() {
        out.push(format!("scene {id} has generations but no metaphor spec"));
    }

    let mut gen_ids = HashSet::new();
    for g in &scene.generations {
        if !gen_ids.insert(g.id) {
            out.push(format!("scene {id}: generation {} appears twice", g.id));
        }
    }
    if let Some(displayed) = scene.displayed_generation {
        if !gen_ids.contains(&displayed) {
            out.push(format!(
                "scene {id}: displayed generation {displayed} is not in its history"
            ));
        }
    }

    let accepted: HashSet<GenerationId> = scene
        .generations
        .iter()
        .filter(|g| g.accepted)
        .map(|g| g.id)
        .collect();
    let mut with_palette = HashSet::new();
    for p in &scene.palettes {
        if !with_palette.insert(p.generation_id) {
            out.push(format!(
                "scene {id}: generation {} has two palettes",
                p.generation_id
            ));
        }
        if !accepted.contains(&p.generation_id) {
            out.push(format!(
                "scene {id}: palette for unaccepted generation {}",
                p.generation_id
            ));
        }
        for v in p.palette.violations() {
            out.push(format!("scene {id}: palette {}: {v}", p.generation_id));
        }
    }
    for g in &accepted {
        if !with_palette.contains(g) {
            out.push(format!("scene {id}: accepted generation {g} has no palette"));
        }
    }

    for (i, d) in scene.depictions.iter().enumerate() {
        if !accepted.contains(&d.generation_id) {
            out.push(format!(
                "scene {id}: depiction for unaccepted generation {}",
                d.generation_id
            ));
        }
        let last = i + 1 == scene.depictions.len();
        if d.superseded == last {
            out.push(format!(
                "scene {id}: only the latest depiction may be current"
            ));
        }
    }

    if let Some(filter) = &scene.filter {
        match filter.origin {
            FilterOrigin::PaletteDefault => out.push(format!(
                "scene {id}: palette-default filter is derived and must not be stored"
            )),
            FilterOrigin::PalettePick if scene.palettes.is_empty() => {
                out.push(format!("scene {id}: palette pick without any palette"))
            }
            _ => {}
        }
    }
}

/// Convenience for building a [`ColorFilter`] from user input.
pub fn custom_filter(hex: &str) -> Result<ColorFilter> {
    Ok(ColorFilter {
        color: Color::parse_hex(hex)?,
        origin: FilterOrigin::CustomHex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::palette::PaletteEntry;

    fn spec(affective: &str, adjectives: &[&str], concept: &str) -> MetaphorSpec {
        MetaphorSpec {
            affective_element: affective.into(),
            adjectives: adjectives.iter().map(|s| s.to_string()).collect(),
            metaphor_concept: concept.into(),
            meaning_type: MeaningType::Connection,
            visual_structure: VisualStructure::Fusion,
            extra_prompt: None,
        }
    }

    fn image(n: u8) -> ImageRef {
        ImageRef::from_bytes(&[n])
    }

    fn red_palette(source: ImageRef) -> Palette {
        Palette {
            entries: vec![PaletteEntry {
                color: Color::new(255, 0, 0),
                weight: 1.0,
            }],
            source_image: source,
        }
    }

    fn metaphor_story() -> (Story, SceneId) {
        let mut story = Story::new("My beach dream").unwrap();
        let id = story.add_scene(SceneKind::Metaphorical, 0).unwrap();
        story
            .set_metaphor_spec(id, spec("old crush holding my hands", &["exciting"], "Electric Sparks"))
            .unwrap();
        (story, id)
    }

    fn accept(story: &mut Story, scene: SceneId, gen: GenerationId) {
        let event = story.accept_generation(scene, gen).unwrap();
        story
            .attach_palette(scene, gen, red_palette(event.image_ref))
            .unwrap();
    }

    #[test]
    fn create_story_starts_empty() {
        let story = Story::new("My beach dream").unwrap();
        assert!(story.scenes.is_empty());
        assert!(story.layout.items.is_empty());
        assert_eq!(story.schema_version, SCHEMA_VERSION);
        assert!(story.violations().is_empty());
    }

    #[test]
    fn whitespace_title_is_rejected() {
        assert!(matches!(Story::new("   "), Err(Error::EmptyTitle)));
    }

    #[test]
    fn same_title_gives_distinct_ids() {
        let a = Story::new("dream").unwrap();
        let b = Story::new("dream").unwrap();
        assert_ne!(a.id, b.id);
    }

    #[test]
    fn scenario_scene_kinds_and_bubbles() {
        let mut story = Story::new("My beach dream").unwrap();
        let literal = story.add_scene(SceneKind::Literal, 0).unwrap();
        assert_eq!(story.scene(literal).unwrap().bubble_shape(), BubbleShape::Rounded);
        assert!(story.layout.items.is_empty());

        let meta = story.add_scene(SceneKind::Metaphorical, 1).unwrap();
        let scene = story.scene(meta).unwrap();
        assert_eq!(scene.position, 1);
        assert_eq!(scene.bubble_shape(), BubbleShape::Spiky);
        assert_eq!(story.layout.items.len(), 1);
    }

    #[test]
    fn add_scene_out_of_range() {
        let mut story = Story::new("d").unwrap();
        story.add_scene(SceneKind::Literal, 0).unwrap();
        story.add_scene(SceneKind::Literal, 1).unwrap();
        assert!(matches!(
            story.add_scene(SceneKind::Literal, 5),
            Err(Error::PositionOutOfRange { position: 5, len: 2 })
        ));
    }

    #[test]
    fn insert_shifts_later_scenes() {
        let mut story = Story::new("d").unwrap();
        let a = story.add_scene(SceneKind::Literal, 0).unwrap();
        let b = story.add_scene(SceneKind::Literal, 1).unwrap();
        let c = story.add_scene(SceneKind::Metaphorical, 1).unwrap();
        let order: Vec<_> = story.scenes.iter().map(|s| s.id).collect();
        assert_eq!(order, vec![a, c, b]);
        assert_eq!(story.scene(b).unwrap().position, 2);
    }

    #[test]
    fn scenario_specs_are_stored() {
        let mut story = Story::new("d").unwrap();
        let id = story.add_scene(SceneKind::Metaphorical, 0).unwrap();
        let first = spec("old crush holding my hands", &["exciting"], "Electric Sparks");
        story.set_metaphor_spec(id, first.clone()).unwrap();
        assert_eq!(story.scene(id).unwrap().metaphor.as_ref(), Some(&first));

        let mut second = spec(
            "hugging and kissing",
            &["thrilling", "worrying"],
            "Embracing Flames",
        );
        second.meaning_type = MeaningType::Similarity;
        second.visual_structure = VisualStructure::Juxtaposition;
        story.set_metaphor_spec(id, second.clone()).unwrap();
        assert_eq!(story.scene(id).unwrap().metaphor.as_ref(), Some(&second));
    }

    #[test]
    fn spec_without_adjectives_is_invalid() {
        let (mut story, id) = metaphor_story();
        let bad = spec("x", &[], "y");
        assert!(matches!(story.set_metaphor_spec(id, bad), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_on_literal_scene_is_rejected() {
        let mut story = Story::new("d").unwrap();
        let id = story.add_scene(SceneKind::Literal, 0).unwrap();
        assert!(matches!(
            story.set_metaphor_spec(id, spec("a", &["b"], "c")),
            Err(Error::NotMetaphorical(_))
        ));
    }

    #[test]
    fn spec_edits_keep_history() {
        let (mut story, id) = metaphor_story();
        story
            .record_generation(id, "p", image(1), GenerationParams::default())
            .unwrap();
        story
            .set_metaphor_spec(id, spec("other", &["calm"], "Still Lake"))
            .unwrap();
        assert_eq!(story.scene(id).unwrap().generations.len(), 1);
    }

    #[test]
    fn generations_append_in_order() {
        let (mut story, id) = metaphor_story();
        let ids: Vec<_> = (0..3)
            .map(|n| {
                story
                    .record_generation(id, "p", image(n), GenerationParams::default())
                    .unwrap()
                    .id
            })
            .collect();
        let scene = story.scene(id).unwrap();
        let stored: Vec<_> = scene.generations.iter().map(|g| g.id).collect();
        assert_eq!(stored, ids);
        assert!(scene.generations.iter().all(|g| !g.accepted));
        assert!(scene.displayed_generation.is_none());
        assert!(story.violations().is_empty());
    }

    #[test]
    fn record_on_literal_scene_fails() {
        let mut story = Story::new("d").unwrap();
        let id = story.add_scene(SceneKind::Literal, 0).unwrap();
        assert!(matches!(
            story.record_generation(id, "p", image(0), GenerationParams::default()),
            Err(Error::NotMetaphorical(_))
        ));
    }

    #[test]
    fn record_without_concept_is_missing_spec() {
        let mut story = Story::new("d").unwrap();
        let id = story.add_scene(SceneKind::Metaphorical, 0).unwrap();
        assert!(matches!(
            story.record_generation(id, "p", image(0), GenerationParams::default()),
            Err(Error::MissingSpec(_))
        ));
        story.set_metaphor_spec(id, spec("a", &["b"], "")).unwrap();
        assert!(matches!(
            story.record_generation(id, "p", image(0), GenerationParams::default()),
            Err(Error::MissingSpec(_))
        ));
    }

    #[test]
    fn accept_displays_the_record() {
        let (mut story, id) = metaphor_story();
        let g = story
            .record_generation(id, "p", image(0), GenerationParams::default())
            .unwrap();
        accept(&mut story, id, g.id);
        let scene = story.scene(id).unwrap();
        assert_eq!(scene.displayed_generation, Some(g.id));
        assert!(scene.generations[0].accepted);
        assert!(story.violations().is_empty());
    }

    #[test]
    fn accept_middle_record_keeps_others_in_slots() {
        let (mut story, id) = metaphor_story();
        let gens: Vec<_> = (0..3)
            .map(|n| {
                story
                    .record_generation(id, "p", image(n), GenerationParams::default())
                    .unwrap()
                    .id
            })
            .collect();
        accept(&mut story, id, gens[1]);
        assert_eq!(story.scene(id).unwrap().generations.len(), 3);
        assert_eq!(story.layout.items[&id].history_slots, vec![gens[0], gens[2]]);
    }

    #[test]
    fn accept_foreign_generation_fails() {
        let (mut story, id) = metaphor_story();
        let other = story.add_scene(SceneKind::Metaphorical, 1).unwrap();
        story
            .set_metaphor_spec(other, spec("a", &["b"], "c"))
            .unwrap();
        let g = story
            .record_generation(other, "p", image(0), GenerationParams::default())
            .unwrap();
        assert!(matches!(
            story.accept_generation(id, g.id),
            Err(Error::UnknownGeneration(_))
        ));
    }

    #[test]
    fn second_accept_is_a_no_op() {
        let (mut story, id) = metaphor_story();
        let a = story
            .record_generation(id, "p", image(0), GenerationParams::default())
            .unwrap();
        let b = story
            .record_generation(id, "p", image(1), GenerationParams::default())
            .unwrap();
        accept(&mut story, id, a.id);
        story.switch_display(id, b.id).unwrap();
        let before = story.clone();
        let event = story.accept_generation(id, a.id).unwrap();
        assert!(!event.newly_accepted);
        assert_eq!(story, before);
    }

    #[test]
    fn switch_display_and_back() {
        let (mut story, id) = metaphor_story();
        let a = story
            .record_generation(id, "p", image(0), GenerationParams::default())
            .unwrap();
        let b = story
            .record_generation(id, "p", image(1), GenerationParams::default())
            .unwrap();
        accept(&mut story, id, b.id);
        story.switch_display(id, a.id).unwrap();
        let scene = story.scene(id).unwrap();
        assert_eq!(scene.displayed_generation, Some(a.id));
        assert_eq!(scene.generations.len(), 2);
        assert!(!scene.generations[0].accepted);
        assert_eq!(story.layout.items[&id].history_slots, vec![b.id]);
        assert!(story.violations().is_empty());
    }

    #[test]
    fn switch_to_displayed_is_identity() {
        let (mut story, id) = metaphor_story();
        let a = story
            .record_generation(id, "p", image(0), GenerationParams::default())
            .unwrap();
        accept(&mut story, id, a.id);
        let before = story.clone();
        story.switch_display(id, a.id).unwrap();
        assert_eq!(story, before);
    }

    #[test]
    fn switch_to_foreign_fails() {
        let (mut story, id) = metaphor_story();
        assert!(matches!(
            story.switch_display(id, GenerationId::new()),
            Err(Error::UnknownGeneration(_))
        ));
    }

    #[test]
    fn depictions_supersede() {
        let (mut story, id) = metaphor_story();
        let a = story
            .record_generation(id, "p", image(0), GenerationParams::default())
            .unwrap();
        let b = story
            .record_generation(id, "p", image(1), GenerationParams::default())
            .unwrap();
        accept(&mut story, id, a.id);
        story.add_depiction(id, a.id, "first").unwrap();
        accept(&mut story, id, b.id);
        story.add_depiction(id, b.id, "second").unwrap();
        let scene = story.scene(id).unwrap();
        assert_eq!(scene.depictions.len(), 2);
        assert!(scene.depictions[0].superseded);
        assert_eq!(scene.current_depiction().unwrap().text, "second");
        assert!(story.violations().is_empty());
    }

    #[test]
    fn display_text_keeps_author_text_separate() {
        let (mut story, id) = metaphor_story();
        story.set_text(id, "I held hands on the shore.").unwrap();
        let a = story
            .record_generation(id, "p", image(0), GenerationParams::default())
            .unwrap();
        accept(&mut story, id, a.id);
        story.add_depiction(id, a.id, "Sparks crackled.").unwrap();
        let scene = story.scene(id).unwrap();
        assert_eq!(scene.text, "I held hands on the shore.");
        assert_eq!(scene.display_text(), "I held hands on the shore.\n\nSparks crackled.");
    }

    #[test]
    fn filters() {
        let (mut story, id) = metaphor_story();
        let a = story
            .record_generation(id, "p", image(0), GenerationParams::default())
            .unwrap();
        accept(&mut story, id, a.id);
        let active = story.scene(id).unwrap().active_filter().unwrap();
        assert_eq!(active.origin, FilterOrigin::PaletteDefault);
        assert_eq!(active.color.hex(), "#FF0000");

        let off_palette = ColorFilter {
            color: Color::new(1, 2, 3),
            origin: FilterOrigin::PalettePick,
        };
        assert!(matches!(
            story.set_filter(id, Some(off_palette)),
            Err(Error::InvalidFilter(_))
        ));

        story.set_filter(id, Some(custom_filter("#808080").unwrap())).unwrap();
        let active = story.scene(id).unwrap().active_filter().unwrap();
        assert_eq!(active.origin, FilterOrigin::CustomHex);

        story
            .set_filter(
                id,
                Some(ColorFilter {
                    color: Color::new(0, 0, 0),
                    origin: FilterOrigin::PaletteDefault,
                }),
            )
            .unwrap();
        assert!(story.scene(id).unwrap().filter.is_none());
    }

    #[test]
    fn remove_scene_drops_layout_item() {
        let (mut story, id) = metaphor_story();
        story.add_scene(SceneKind::Literal, 0).unwrap();
        story.remove_scene(id).unwrap();
        assert!(story.layout.items.is_empty());
        assert_eq!(story.scenes[0].position, 0);
        assert!(story.violations().is_empty());
    }

    #[test]
    fn violations_catch_dangling_display() {
        let (mut story, id) = metaphor_story();
        story.scenes[0].displayed_generation = Some(GenerationId::new());
        assert!(story.violations().iter().any(|v| v.contains("not in its history")));
        let _ = id;
    }

    #[test]
    fn image_ref_rejects_non_digest() {
        assert!(ImageRef::try_from("abc".to_string()).is_err());
        let r = ImageRef::from_bytes(b"hello");
        assert_eq!(
            r.as_str(),
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}

//! Randomized operation models shared by the property suites. Enabled with
//! the `testkit` feature.

use proptest::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use crate::engine::MetaphorEngine;
use crate::layout::{ItemEdit, Offset, MAX_SCALE, MIN_SCALE};
use crate::palette::{Color, ColorFilter, FilterOrigin, Palette, PaletteEntry};
use crate::providers::{FaultPlan, Faulty, MockChat, MockImage, Providers};
use crate::store::{validate_bundle, BundleStore};
use crate::story::{
    GenerationParams, ImageRef, MeaningType, MetaphorSpec, SceneId, SceneKind, Story, VisualStructure,
};
use crate::studio::{FilterRequest, GenerationSettings, ScenePatch, Studio};
use crate::error::Result;

/// Indices are reduced modulo the current length when applied, so any
/// generated value addresses something whenever anything exists.
#[derive(Debug, Clone, PartialEq)]
pub enum StoryOp {
    AddScene { metaphorical: bool, position: usize },
    RemoveScene(usize),
    SetText(usize, String),
    SetSpec { scene: usize, variant: usize, concept: bool, valid: bool },
    /// Setting a spec on a literal scene, which must be refused.
    SpecOnLiteral(usize),
    Generate(usize),
    Accept { scene: usize, generation: usize },
    Depict { scene: usize, generation: usize },
    Display { scene: usize, generation: usize },
    Filter { scene: usize, choice: FilterChoice },
    Move { scene: usize, anchor_x: f64, dx: f64, dy: f64 },
    Resize { scene: usize, scale: f64 },
    EditLayout(Vec<(usize, Option<f64>, Option<f64>)>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterChoice {
    Default,
    Custom(u8, u8, u8),
    /// A colour from one of the scene's palettes, or an arbitrary colour
    /// when `from_palette` is false.
    Pick { entry: usize, from_palette: bool },
}

fn filter_choice() -> impl Strategy<Value = FilterChoice> {
    prop_oneof![
        Just(FilterChoice::Default),
        any::<(u8, u8, u8)>().prop_map(|(r, g, b)| FilterChoice::Custom(r, g, b)),
        (any::<usize>(), any::<bool>())
            .prop_map(|(entry, from_palette)| FilterChoice::Pick { entry, from_palette }),
    ]
}

/// Anchor coordinates, mostly inside the unit interval but with some
/// out-of-range and non-finite values.
fn coordinate() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => 0.0..=1.0f64,
        1 => -1.0..2.0f64,
        1 => prop::sample::select(vec![f64::NAN, f64::INFINITY, 0.0, 1.0]),
    ]
}

pub fn story_op() -> impl Strategy<Value = StoryOp> {
    prop_oneof![
        4 => (any::<bool>(), any::<usize>())
            .prop_map(|(metaphorical, position)| StoryOp::AddScene { metaphorical, position }),
        1 => any::<usize>().prop_map(StoryOp::RemoveScene),
        1 => (any::<usize>(), "[a-z ]{0,12}").prop_map(|(i, t)| StoryOp::SetText(i, t)),
        3 => (any::<usize>(), 0usize..4, prop::bool::weighted(0.8), prop::bool::weighted(0.9))
            .prop_map(|(scene, variant, concept, valid)| StoryOp::SetSpec { scene, variant, concept, valid }),
        1 => any::<usize>().prop_map(StoryOp::SpecOnLiteral),
        3 => any::<usize>().prop_map(StoryOp::Generate),
        3 => (any::<usize>(), any::<usize>())
            .prop_map(|(scene, generation)| StoryOp::Accept { scene, generation }),
        2 => (any::<usize>(), any::<usize>())
            .prop_map(|(scene, generation)| StoryOp::Depict { scene, generation }),
        2 => (any::<usize>(), any::<usize>())
            .prop_map(|(scene, generation)| StoryOp::Display { scene, generation }),
        2 => (any::<usize>(), filter_choice())
            .prop_map(|(scene, choice)| StoryOp::Filter { scene, choice }),
        2 => (any::<usize>(), coordinate(), -0.5..0.5f64, -0.5..0.5f64)
            .prop_map(|(scene, anchor_x, dx, dy)| StoryOp::Move { scene, anchor_x, dx, dy }),
        1 => (any::<usize>(), -1.0..8.0f64).prop_map(|(scene, scale)| StoryOp::Resize { scene, scale }),
        1 => prop::collection::vec(
            (any::<usize>(), prop::option::of(coordinate()), prop::option::of(0.1..5.0f64)),
            1..4
        )
        .prop_map(StoryOp::EditLayout),
    ]
}

/// Operations weighted towards the layout: scene churn plus moves, resizes
/// and batch edits.
pub fn layout_op() -> impl Strategy<Value = StoryOp> {
    prop_oneof![
        3 => (Just(true), any::<usize>())
            .prop_map(|(metaphorical, position)| StoryOp::AddScene { metaphorical, position }),
        1 => (Just(false), any::<usize>())
            .prop_map(|(metaphorical, position)| StoryOp::AddScene { metaphorical, position }),
        1 => any::<usize>().prop_map(StoryOp::RemoveScene),
        4 => (any::<usize>(), coordinate(), -0.5..0.5f64, -0.5..0.5f64)
            .prop_map(|(scene, anchor_x, dx, dy)| StoryOp::Move { scene, anchor_x, dx, dy }),
        1 => (any::<usize>(), -1.0..8.0f64).prop_map(|(scene, scale)| StoryOp::Resize { scene, scale }),
        2 => prop::collection::vec(
            (any::<usize>(), prop::option::of(coordinate()), prop::option::of(0.1..5.0f64)),
            1..4
        )
        .prop_map(StoryOp::EditLayout),
    ]
}

const SPEC_VARIANTS: [(&str, &str, &str); 4] = [
    ("old crush holding my hands", "exciting", "Electric Sparks"),
    ("hugging and kissing", "thrilling", "Embracing Flames"),
    ("monster in the crowd", "disturbing", "Bomb under the table"),
    ("talking content", "boring", "Text bubble drizzle"),
];

fn spec_variant(variant: usize, concept: bool, valid: bool) -> MetaphorSpec {
    let variant = variant % 36;
    let (affect, adjective, c) = SPEC_VARIANTS[variant % SPEC_VARIANTS.len()];
    MetaphorSpec {
        affective_element: affect.into(),
        adjectives: if valid { vec![adjective.into()] } else { Vec::new() },
        metaphor_concept: if concept { c.into() } else { String::new() },
        meaning_type: MeaningType::ALL[variant % 3],
        visual_structure: VisualStructure::ALL[(variant / 3 + variant) % 3],
        extra_prompt: None,
    }
}

/// A story plus the image bytes its generations refer to.
#[derive(Debug, Clone)]
pub struct StoryModel {
    pub story: Story,
    pub images: BTreeMap<ImageRef, Vec<u8>>,
    counter: u64,
}

impl Default for StoryModel {
    fn default() -> Self {
        Self::new()
    }
}

fn pick<T>(items: &[T], i: usize) -> Option<&T> {
    (!items.is_empty()).then(|| &items[i % items.len()])
}

impl StoryModel {
    pub fn new() -> Self {
        Self {
            story: Story::new("Property story").expect("non-empty title"),
            images: BTreeMap::new(),
            counter: 0,
        }
    }

    /// A story that already holds one metaphorical scene with a complete
    /// spec, so generation paths are reachable from the first operation.
    pub fn seeded() -> Self {
        let mut model = Self::new();
        let id = model
            .story
            .add_scene(SceneKind::Metaphorical, 0)
            .expect("empty story accepts a scene");
        model
            .story
            .set_metaphor_spec(id, spec_variant(0, true, true))
            .expect("complete spec");
        model
    }

    fn scene_id(&self, i: usize) -> Option<SceneId> {
        pick(&self.story.scenes, i).map(|s| s.id)
    }

    fn metaphorical_id(&self, i: usize) -> Option<SceneId> {
        pick(&self.story.metaphorical_order(), i).copied()
    }

    /// Applies one operation. `Ok` also covers operations skipped because
    /// nothing was there to address.
    pub fn apply(&mut self, op: &StoryOp) -> Result<()> {
        match op {
            StoryOp::AddScene { metaphorical, position } => {
                let kind = if *metaphorical { SceneKind::Metaphorical } else { SceneKind::Literal };
                // One position past the end is out of range on purpose.
                let position = position % (self.story.scenes.len() + 2);
                self.story.add_scene(kind, position).map(|_| ())
            }
            StoryOp::RemoveScene(i) => match self.scene_id(*i) {
                Some(id) => self.story.remove_scene(id).map(|_| ()),
                None => Ok(()),
            },
            StoryOp::SetText(i, text) => match self.scene_id(*i) {
                Some(id) => self.story.set_text(id, text),
                None => Ok(()),
            },
            StoryOp::SetSpec { scene, variant, concept, valid } => match self.metaphorical_id(*scene) {
                Some(id) => self.story.set_metaphor_spec(id, spec_variant(*variant, *concept, *valid)),
                None => Ok(()),
            },
            StoryOp::SpecOnLiteral(i) => {
                let literal: Vec<SceneId> = self
                    .story
                    .scenes
                    .iter()
                    .filter(|s| !s.is_metaphorical())
                    .map(|s| s.id)
                    .collect();
                match pick(&literal, *i) {
                    Some(id) => self.story.set_metaphor_spec(*id, spec_variant(*i, true, true)),
                    None => Ok(()),
                }
            }
            StoryOp::Generate(i) => {
                let Some(id) = self.metaphorical_id(*i) else { return Ok(()) };
                self.counter += 1;
                let bytes = format!("image bytes {}", self.counter).into_bytes();
                let image_ref = ImageRef::from_bytes(&bytes);
                self.story
                    .record_generation(id, "prompt", image_ref.clone(), GenerationParams::default())?;
                self.images.insert(image_ref, bytes);
                Ok(())
            }
            StoryOp::Accept { scene, generation } => {
                let Some(id) = self.metaphorical_id(*scene) else { return Ok(()) };
                let gens: Vec<_> = self.story.scene(id)?.generations.iter().map(|g| g.id).collect();
                let Some(gid) = pick(&gens, *generation).copied() else { return Ok(()) };
                // Acceptance and palette commit together, as in the studio.
                let mut draft = self.story.clone();
                let event = draft.accept_generation(id, gid)?;
                if event.newly_accepted {
                    let seed = event.image_ref.as_str().as_bytes();
                    let palette = Palette {
                        entries: vec![
                            PaletteEntry { color: Color::new(seed[0], seed[1], seed[2]), weight: 0.75 },
                            PaletteEntry { color: Color::new(seed[3], seed[4], seed[5]), weight: 0.25 },
                        ],
                        source_image: event.image_ref.clone(),
                    };
                    draft.attach_palette(id, gid, palette)?;
                }
                self.story = draft;
                Ok(())
            }
            StoryOp::Depict { scene, generation } => {
                let Some(id) = self.metaphorical_id(*scene) else { return Ok(()) };
                let gens: Vec<_> = self.story.scene(id)?.generations.iter().map(|g| g.id).collect();
                let Some(gid) = pick(&gens, *generation).copied() else { return Ok(()) };
                self.story.add_depiction(id, gid, "a depiction")
            }
            StoryOp::Display { scene, generation } => {
                let Some(id) = self.metaphorical_id(*scene) else { return Ok(()) };
                let gens: Vec<_> = self.story.scene(id)?.generations.iter().map(|g| g.id).collect();
                let Some(gid) = pick(&gens, *generation).copied() else { return Ok(()) };
                self.story.switch_display(id, gid)
            }
            StoryOp::Filter { scene, choice } => {
                let Some(id) = self.metaphorical_id(*scene) else { return Ok(()) };
                let filter = match choice {
                    FilterChoice::Default => None,
                    FilterChoice::Custom(r, g, b) => Some(ColorFilter {
                        color: Color::new(*r, *g, *b),
                        origin: FilterOrigin::CustomHex,
                    }),
                    FilterChoice::Pick { entry, from_palette } => {
                        let colors: Vec<Color> = self
                            .story
                            .scene(id)?
                            .palettes
                            .iter()
                            .flat_map(|p| p.palette.entries.iter().map(|e| e.color))
                            .collect();
                        let color = match pick(&colors, *entry) {
                            Some(c) if *from_palette => *c,
                            _ => Color::new(1, 2, 3),
                        };
                        Some(ColorFilter { color, origin: FilterOrigin::PalettePick })
                    }
                };
                self.story.set_filter(id, filter)
            }
            StoryOp::Move { scene, anchor_x, dx, dy } => match self.metaphorical_id(*scene) {
                Some(id) => self.story.move_layout_item(id, *anchor_x, Offset { dx: *dx, dy: *dy }),
                None => Ok(()),
            },
            StoryOp::Resize { scene, scale } => match self.metaphorical_id(*scene) {
                Some(id) => self.story.resize_layout_item(id, *scale).map(|_| ()),
                None => Ok(()),
            },
            StoryOp::EditLayout(edits) => {
                let edits: Vec<ItemEdit> = edits
                    .iter()
                    .filter_map(|(i, x, s)| {
                        self.metaphorical_id(*i).map(|scene_id| ItemEdit {
                            scene_id,
                            anchor_x: *x,
                            image_offset: None,
                            scale: *s,
                        })
                    })
                    .collect();
                if edits.is_empty() {
                    return Ok(());
                }
                self.story.edit_layout(&edits, None)
            }
        }
    }
}

/// Layout invariants: one item per metaphorical scene, anchors strictly
/// increasing in story order and inside [0, 1], scales within bounds.
pub fn layout_violations(story: &Story) -> Vec<String> {
    let mut out = Vec::new();
    let order = story.metaphorical_order();
    if order.len() != story.layout.items.len() || order.iter().any(|id| !story.layout.items.contains_key(id)) {
        out.push("layout items differ from metaphorical scenes".into());
        return out;
    }
    let anchors: Vec<f64> = order.iter().map(|id| story.layout.items[id].anchor_x).collect();
    if anchors.iter().any(|x| !(0.0..=1.0).contains(x)) {
        out.push(format!("anchor outside [0, 1]: {anchors:?}"));
    }
    if anchors.windows(2).any(|w| w[0] >= w[1]) {
        out.push(format!("anchors not strictly increasing: {anchors:?}"));
    }
    for item in story.layout.items.values() {
        if !(MIN_SCALE..=MAX_SCALE).contains(&item.scale) {
            out.push(format!("scale {} out of bounds", item.scale));
        }
    }
    out
}

/// History only grows: every surviving scene's earlier generations,
/// depictions and palettes are still there, in order, and acceptance is
/// never revoked.
pub fn append_only_violations(before: &Story, after: &Story) -> Vec<String> {
    let mut out = Vec::new();
    for old in &before.scenes {
        let Ok(new) = after.scene(old.id) else { continue };
        let prefix = |a: usize, b: usize| a <= b;
        if !prefix(old.generations.len(), new.generations.len())
            || old
                .generations
                .iter()
                .zip(&new.generations)
                .any(|(a, b)| a.id != b.id || a.image_ref != b.image_ref || (a.accepted && !b.accepted))
        {
            out.push(format!("scene {}: generation history rewritten", old.id));
        }
        if !prefix(old.depictions.len(), new.depictions.len())
            || old
                .depictions
                .iter()
                .zip(&new.depictions)
                .any(|(a, b)| a.generation_id != b.generation_id || a.text != b.text)
        {
            out.push(format!("scene {}: depictions rewritten", old.id));
        }
        if !prefix(old.palettes.len(), new.palettes.len())
            || old.palettes.iter().zip(&new.palettes).any(|(a, b)| a != b)
        {
            out.push(format!("scene {}: palettes rewritten", old.id));
        }
        if old.kind != new.kind {
            out.push(format!("scene {}: kind changed", old.id));
        }
    }
    out
}

/// Runs `ops` from a seeded story, checking after every step that the
/// story is valid, history is append-only, the layout holds, and failed
/// operations changed nothing.
pub fn check_story_run(ops: &[StoryOp]) -> std::result::Result<StoryModel, String> {
    let mut model = StoryModel::seeded();
    for (step, op) in ops.iter().enumerate() {
        let before = model.story.clone();
        let result = model.apply(op);
        if result.is_err() && model.story != before {
            return Err(format!("step {step} {op:?}: failed but changed the story"));
        }
        let mut problems = model.story.violations();
        problems.extend(append_only_violations(&before, &model.story));
        problems.extend(layout_violations(&model.story));
        if !problems.is_empty() {
            return Err(format!("step {step} {op:?}: {problems:?}"));
        }
    }
    Ok(model)
}

/// Saves the model's story with its images and loads it back.
pub fn check_round_trip(model: &StoryModel, dir: &Path) -> std::result::Result<(), String> {
    let store = BundleStore::open(dir).map_err(|e| e.to_string())?;
    for bytes in model.images.values() {
        store.put_image(model.story.id, bytes).map_err(|e| e.to_string())?;
    }
    store.save_story(&model.story).map_err(|e| format!("save: {e}"))?;
    let loaded = store.load_story(model.story.id).map_err(|e| format!("load: {e}"))?;
    if loaded != model.story {
        return Err("loaded story differs from saved story".into());
    }
    let report = validate_bundle(&store.bundle_dir(model.story.id));
    if !report.is_clean() {
        return Err(format!("bundle not clean: {:?}", report.violations));
    }
    Ok(())
}

/// Studio-level operations, including provider fault switches.
#[derive(Debug, Clone, PartialEq)]
pub enum FaultOp {
    AddScene { metaphorical: bool },
    SetSpec { scene: usize, variant: usize, concept: bool },
    Suggest(usize),
    Generate(usize),
    Accept { scene: usize, generation: usize },
    Display { scene: usize, generation: usize },
    CustomFilter { scene: usize, rgb: (u8, u8, u8) },
    Move { scene: usize, anchor_x: f64 },
    RemoveScene(usize),
    ChatDown(bool),
    ImageDown(bool),
    FailNextChat(usize),
    FailNextImage(usize),
}

pub fn fault_op() -> impl Strategy<Value = FaultOp> {
    prop_oneof![
        3 => any::<bool>().prop_map(|metaphorical| FaultOp::AddScene { metaphorical }),
        3 => (any::<usize>(), 0usize..4, prop::bool::weighted(0.85))
            .prop_map(|(scene, variant, concept)| FaultOp::SetSpec { scene, variant, concept }),
        1 => any::<usize>().prop_map(FaultOp::Suggest),
        3 => any::<usize>().prop_map(FaultOp::Generate),
        3 => (any::<usize>(), any::<usize>())
            .prop_map(|(scene, generation)| FaultOp::Accept { scene, generation }),
        1 => (any::<usize>(), any::<usize>())
            .prop_map(|(scene, generation)| FaultOp::Display { scene, generation }),
        1 => (any::<usize>(), any::<(u8, u8, u8)>())
            .prop_map(|(scene, rgb)| FaultOp::CustomFilter { scene, rgb }),
        1 => (any::<usize>(), coordinate()).prop_map(|(scene, anchor_x)| FaultOp::Move { scene, anchor_x }),
        1 => any::<usize>().prop_map(FaultOp::RemoveScene),
        1 => prop::bool::weighted(0.3).prop_map(FaultOp::ChatDown),
        1 => prop::bool::weighted(0.3).prop_map(FaultOp::ImageDown),
        1 => (1usize..3).prop_map(FaultOp::FailNextChat),
        1 => (1usize..3).prop_map(FaultOp::FailNextImage),
    ]
}

/// A studio over mock providers wrapped in fault switches, producing small
/// images so that long runs stay fast.
pub struct FaultRig {
    pub studio: Studio,
    pub chat: Arc<FaultPlan>,
    pub image: Arc<FaultPlan>,
}

impl FaultRig {
    pub fn new(dir: &Path) -> Result<Self> {
        let chat = FaultPlan::new();
        let image = FaultPlan::new();
        let providers = Providers::new(
            Arc::new(Faulty::new(MockChat::builtin(), chat.clone())),
            Arc::new(Faulty::new(MockImage::new(), image.clone())),
            Duration::from_secs(10),
            4,
        );
        let mut settings = GenerationSettings::default();
        settings.image.width = 32;
        settings.image.height = 32;
        let studio = Studio::open(BundleStore::open(dir)?, providers, MetaphorEngine::default(), settings)?;
        Ok(Self { studio, chat, image })
    }
}

/// Runs `ops` against a fresh fault rig in `dir`. After every step the
/// in-memory story and the bundle on disk must both be valid, and a failed
/// generation must not have added a record.
pub async fn check_fault_run(ops: &[FaultOp], dir: &Path) -> std::result::Result<(), String> {
    let rig = FaultRig::new(dir).map_err(|e| e.to_string())?;
    let studio = &rig.studio;
    let story_id = studio.create_story("Faulty dream").await.map_err(|e| e.to_string())?.id;
    let first = studio
        .add_scene(story_id, SceneKind::Metaphorical, None)
        .await
        .map_err(|e| e.to_string())?;
    studio
        .patch_scene(first.id, ScenePatch { text: None, metaphor: Some(spec_variant(0, true, true)) })
        .await
        .map_err(|e| e.to_string())?;
    for (step, op) in ops.iter().enumerate() {
        let story = studio.story(story_id).map_err(|e| e.to_string())?;
        let scene_at = |i: usize| pick(&story.scenes, i).map(|s| s.id);
        let order = story.metaphorical_order();
        let metaphorical_at = |i: usize| pick(&order, i).copied();
        let gen_at = |s: SceneId, i: usize| {
            story
                .scene(s)
                .ok()
                .and_then(|sc| pick(&sc.generations, i).map(|g| g.id))
        };
        let mut generations_before = None;
        let outcome: Result<()> = match op {
            FaultOp::AddScene { metaphorical } => {
                let kind = if *metaphorical { SceneKind::Metaphorical } else { SceneKind::Literal };
                studio.add_scene(story_id, kind, None).await.map(|_| ())
            }
            FaultOp::SetSpec { scene, variant, concept } => match scene_at(*scene) {
                Some(id) => studio
                    .patch_scene(
                        id,
                        ScenePatch { text: None, metaphor: Some(spec_variant(*variant, *concept, true)) },
                    )
                    .await
                    .map(|_| ()),
                None => Ok(()),
            },
            FaultOp::Suggest(i) => match metaphorical_at(*i) {
                Some(id) => studio.request_suggestions(id, None, None).await.map(|_| ()),
                None => Ok(()),
            },
            FaultOp::Generate(i) => match metaphorical_at(*i) {
                Some(id) => {
                    generations_before = Some((id, story.scene(id).map(|s| s.generations.len()).unwrap_or(0)));
                    studio.request_generation(id, None).await.map(|_| ())
                }
                None => Ok(()),
            },
            FaultOp::Accept { scene, generation } => match metaphorical_at(*scene) {
                Some(id) => match gen_at(id, *generation) {
                    Some(g) => studio.finalize_acceptance(id, g).await.map(|_| ()),
                    None => Ok(()),
                },
                None => Ok(()),
            },
            FaultOp::Display { scene, generation } => match metaphorical_at(*scene) {
                Some(id) => match gen_at(id, *generation) {
                    Some(g) => studio.switch_display(id, g).await.map(|_| ()),
                    None => Ok(()),
                },
                None => Ok(()),
            },
            FaultOp::CustomFilter { scene, rgb } => match metaphorical_at(*scene) {
                Some(id) => studio
                    .set_filter(
                        id,
                        FilterRequest {
                            origin: FilterOrigin::CustomHex,
                            color: Some(Color::new(rgb.0, rgb.1, rgb.2).hex()),
                        },
                    )
                    .await
                    .map(|_| ()),
                None => Ok(()),
            },
            FaultOp::Move { scene, anchor_x } => match pick(&story.metaphorical_order(), *scene) {
                Some(id) => studio
                    .edit_layout(
                        story_id,
                        &[ItemEdit { scene_id: *id, anchor_x: Some(*anchor_x), image_offset: None, scale: None }],
                        None,
                    )
                    .await
                    .map(|_| ()),
                None => Ok(()),
            },
            FaultOp::RemoveScene(i) => match scene_at(*i) {
                Some(id) => studio.delete_scene(id).await.map(|_| ()),
                None => Ok(()),
            },
            FaultOp::ChatDown(down) => {
                rig.chat.set_down(*down);
                Ok(())
            }
            FaultOp::ImageDown(down) => {
                rig.image.set_down(*down);
                Ok(())
            }
            FaultOp::FailNextChat(n) => {
                rig.chat.fail_next(*n);
                Ok(())
            }
            FaultOp::FailNextImage(n) => {
                rig.image.fail_next(*n);
                Ok(())
            }
        };
        let after = studio.story(story_id).map_err(|e| e.to_string())?;
        let mut problems = after.violations();
        problems.extend(append_only_violations(&story, &after));
        problems.extend(layout_violations(&after));
        if outcome.is_err() {
            if let Some((id, n)) = generations_before {
                let now = after.scene(id).map(|s| s.generations.len()).unwrap_or(0);
                if now != n {
                    problems.push("failed generation appended a record".into());
                }
            }
            if *after != *story {
                problems.push("failed operation changed the story".into());
            }
        }
        let report = validate_bundle(&studio.store().bundle_dir(story_id));
        problems.extend(report.violations.into_iter().map(|v| format!("bundle: {v}")));
        match BundleStore::load_path(&studio.store().bundle_dir(story_id)) {
            Ok(on_disk) if on_disk != *after => problems.push("bundle differs from memory".into()),
            Err(e) => problems.push(format!("bundle load: {e}")),
            Ok(_) => {}
        }
        if !problems.is_empty() {
            return Err(format!("step {step} {op:?} -> {outcome:?}: {problems:?}"));
        }
    }
    Ok(())
}

/// A procedurally drawn "photograph": a graded sunset sky, a sun disk, a
/// sea band with wave shading and per-pixel noise. Deterministic in `seed`.
pub fn synthetic_photo(width: u32, height: u32, seed: u64) -> image::RgbImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let horizon = height as f64 * 0.62;
    let (sun_x, sun_y, sun_r) = (width as f64 * 0.55, horizon - height as f64 * 0.08, height as f64 * 0.09);
    let lerp = |a: [f64; 3], b: [f64; 3], t: f64| [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t);
    image::RgbImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let base = if ((fx - sun_x).powi(2) + (fy - sun_y).powi(2)).sqrt() < sun_r {
            [255.0, 236.0, 170.0]
        } else if fy < horizon {
            let t = fy / horizon;
            if t < 0.5 {
                lerp([70.0, 40.0, 110.0], [220.0, 90.0, 90.0], t * 2.0)
            } else {
                lerp([220.0, 90.0, 90.0], [250.0, 170.0, 60.0], (t - 0.5) * 2.0)
            }
        } else {
            let t = (fy - horizon) / (height as f64 - horizon);
            let wave = ((fx / 9.0 + fy / 3.0).sin() * 0.5 + 0.5) * 25.0;
            let sea = lerp([40.0, 70.0, 120.0], [15.0, 30.0, 60.0], t);
            [sea[0] + wave, sea[1] + wave, sea[2] + wave * 0.6]
        };
        let noise: f64 = rng.random_range(-6.0..6.0);
        image::Rgb(base.map(|c| (c + noise).round().clamp(0.0, 255.0) as u8))
    })
}

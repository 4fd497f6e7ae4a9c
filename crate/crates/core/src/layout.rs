//! Storyline layout: one anchor per metaphorical scene on a horizontal axis,
//! the displayed image dangling from it and earlier generations stacked
//! above. All coordinates are normalized to the canvas, `[0, 1]`.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::story::{GenerationId, Scene, SceneId, Story};

pub const MIN_SCALE: f64 = 0.25;
pub const MAX_SCALE: f64 = 4.0;
pub const DEFAULT_AXIS_Y: f64 = 0.5;
pub const DEFAULT_OFFSET: Offset = Offset { dx: 0.0, dy: 0.15 };

const SPACING_EPS: f64 = 1e-9;

/// Displacement of the dangling image from its anchor. Positive `dy` is
/// below the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutItem {
    pub anchor_x: f64,
    pub image_offset: Offset,
    pub scale: f64,
    /// Generations drawn above the axis, oldest first. Never contains the
    /// displayed generation.
    #[serde(default)]
    pub history_slots: Vec<GenerationId>,
}

impl LayoutItem {
    fn at(anchor_x: f64) -> Self {
        Self {
            anchor_x,
            image_offset: DEFAULT_OFFSET,
            scale: 1.0,
            history_slots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutState {
    pub items: BTreeMap<SceneId, LayoutItem>,
    pub axis_y: f64,
}

impl Default for LayoutState {
    fn default() -> Self {
        Self {
            items: BTreeMap::new(),
            axis_y: DEFAULT_AXIS_Y,
        }
    }
}

/// A partial update of one layout item, as sent by the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEdit {
    pub scene_id: SceneId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_offset: Option<Offset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

fn default_anchor(i: usize, m: usize) -> f64 {
    (i + 1) as f64 / (m + 1) as f64
}

/// Equal spacing: the i-th of m metaphorical scenes (1-based) sits at
/// `i / (m + 1)`.
pub fn default_layout(story: &Story) -> LayoutState {
    let mut state = LayoutState::default();
    let order = story.metaphorical_order();
    let m = order.len();
    for (i, id) in order.iter().enumerate() {
        state.items.insert(*id, LayoutItem::at(default_anchor(i, m)));
    }
    for scene in &story.scenes {
        state.sync_history_slots(scene);
    }
    state
}

fn check_coordinate(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfBounds(format!("{name} must be finite, got {value}")))
    }
}

impl LayoutState {
    fn item_mut(&mut self, id: SceneId) -> Result<&mut LayoutItem> {
        self.items
            .get_mut(&id)
            .ok_or_else(|| Error::UnknownScene(id.to_string()))
    }

    fn is_default_spaced(&self, order: &[SceneId]) -> bool {
        let m = order.len();
        order.iter().enumerate().all(|(i, id)| {
            self.items
                .get(id)
                .is_some_and(|item| (item.anchor_x - default_anchor(i, m)).abs() < SPACING_EPS)
        })
    }

    fn respace(&mut self, order: &[SceneId]) {
        let m = order.len();
        for (i, id) in order.iter().enumerate() {
            if let Some(item) = self.items.get_mut(id) {
                item.anchor_x = default_anchor(i, m);
            }
        }
    }

    /// Adds an item for a newly inserted metaphorical scene. `order` already
    /// includes `id`. An untouched (equally spaced) layout is re-spaced;
    /// otherwise the new anchor goes halfway between its neighbours.
    pub(crate) fn insert_item(&mut self, order: &[SceneId], id: SceneId) {
        let before: Vec<SceneId> = order.iter().copied().filter(|s| *s != id).collect();
        let was_default = self.is_default_spaced(&before);
        let index = order.iter().position(|s| *s == id).unwrap_or(order.len());
        let left = index
            .checked_sub(1)
            .and_then(|i| self.items.get(&order[i]))
            .map_or(0.0, |item| item.anchor_x);
        let right = order
            .get(index + 1)
            .and_then(|s| self.items.get(s))
            .map_or(1.0, |item| item.anchor_x);
        let mid = (left + right) / 2.0;
        self.items.insert(id, LayoutItem::at(mid));
        if was_default || !(left < mid && mid < right) {
            self.respace(order);
        }
    }

    pub(crate) fn remove_item(&mut self, before: &[SceneId], after: &[SceneId], id: SceneId) {
        let was_default = self.is_default_spaced(before);
        self.items.remove(&id);
        if was_default {
            self.respace(after);
        }
    }

    fn check_neighbours(&self, order: &[SceneId], id: SceneId, x: f64) -> Result<()> {
        let index = order
            .iter()
            .position(|s| *s == id)
            .ok_or_else(|| Error::UnknownScene(id.to_string()))?;
        if let Some(prev) = index.checked_sub(1).and_then(|i| self.items.get(&order[i])) {
            if x <= prev.anchor_x {
                return Err(Error::OrderViolation(format!(
                    "anchor {x} would not be right of the previous scene's anchor {}",
                    prev.anchor_x
                )));
            }
        }
        if let Some(next) = order.get(index + 1).and_then(|s| self.items.get(s)) {
            if x >= next.anchor_x {
                return Err(Error::OrderViolation(format!(
                    "anchor {x} would not be left of the next scene's anchor {}",
                    next.anchor_x
                )));
            }
        }
        Ok(())
    }

    /// Relocates an anchor and its image offset. The anchor must stay strictly
    /// between its chronological neighbours; offsets are unconstrained.
    pub fn move_item(
        &mut self,
        order: &[SceneId],
        id: SceneId,
        anchor_x: f64,
        offset: Offset,
    ) -> Result<()> {
        if !self.items.contains_key(&id) {
            return Err(Error::UnknownScene(id.to_string()));
        }
        check_coordinate("anchor_x", anchor_x)?;
        if !(0.0..=1.0).contains(&anchor_x) {
            return Err(Error::OutOfBounds(format!("anchor_x {anchor_x} is outside [0, 1]")));
        }
        check_coordinate("dx", offset.dx)?;
        check_coordinate("dy", offset.dy)?;
        self.check_neighbours(order, id, anchor_x)?;
        let item = self.item_mut(id)?;
        item.anchor_x = anchor_x;
        item.image_offset = offset;
        Ok(())
    }

    /// Sets the image scale, clamped to `[MIN_SCALE, MAX_SCALE]`. Returns the
    /// applied value.
    pub fn resize_item(&mut self, id: SceneId, scale: f64) -> Result<f64> {
        let item = self.item_mut(id)?;
        if scale.is_nan() {
            return Err(Error::OutOfBounds("scale is NaN".into()));
        }
        item.scale = scale.clamp(MIN_SCALE, MAX_SCALE);
        Ok(item.scale)
    }

    pub(crate) fn apply_edits(
        &mut self,
        order: &[SceneId],
        edits: &[ItemEdit],
        axis_y: Option<f64>,
    ) -> Result<()> {
        let mut next = self.clone();
        if let Some(y) = axis_y {
            check_coordinate("axis_y", y)?;
            if !(0.0..=1.0).contains(&y) {
                return Err(Error::OutOfBounds(format!("axis_y {y} is outside [0, 1]")));
            }
            next.axis_y = y;
        }
        for edit in edits {
            let item = next.item_mut(edit.scene_id)?;
            if let Some(x) = edit.anchor_x {
                check_coordinate("anchor_x", x)?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::OutOfBounds(format!("anchor_x {x} is outside [0, 1]")));
                }
                item.anchor_x = x;
            }
            if let Some(offset) = edit.image_offset {
                check_coordinate("dx", offset.dx)?;
                check_coordinate("dy", offset.dy)?;
                item.image_offset = offset;
            }
            if let Some(scale) = edit.scale {
                next.resize_item(edit.scene_id, scale)?;
            }
        }
        next.check_order(order)?;
        *self = next;
        Ok(())
    }

    /// Anchors must increase strictly along `order`.
    pub fn check_order(&self, order: &[SceneId]) -> Result<()> {
        let mut prev: Option<f64> = None;
        for id in order {
            let Some(item) = self.items.get(id) else {
                continue;
            };
            if let Some(p) = prev {
                if item.anchor_x <= p {
                    return Err(Error::OrderViolation(format!(
                        "anchor {} of scene {id} is not right of {p}",
                        item.anchor_x
                    )));
                }
            }
            prev = Some(item.anchor_x);
        }
        Ok(())
    }

    /// History slots become the scene's generations minus the displayed one,
    /// in creation order. Scenes without an item are ignored.
    pub fn sync_history_slots(&mut self, scene: &Scene) {
        if let Some(item) = self.items.get_mut(&scene.id) {
            item.history_slots = expected_slots(scene);
        }
    }

    pub(crate) fn violations(&self, story: &Story) -> Vec<String> {
        let mut out = Vec::new();
        let metaphorical: HashSet<SceneId> = story.metaphorical_order().into_iter().collect();
        for id in metaphorical.iter() {
            if !self.items.contains_key(id) {
                out.push(format!("metaphorical scene {id} has no layout item"));
            }
        }
        for (id, item) in &self.items {
            if !metaphorical.contains(id) {
                out.push(format!("layout item {id} has no metaphorical scene"));
                continue;
            }
            if !(0.0..=1.0).contains(&item.anchor_x) {
                out.push(format!("anchor of {id} is outside [0, 1]"));
            }
            if !(MIN_SCALE..=MAX_SCALE).contains(&item.scale) {
                out.push(format!("scale {} of {id} is out of bounds", item.scale));
            }
            if !item.image_offset.dx.is_finite() || !item.image_offset.dy.is_finite() {
                out.push(format!("offset of {id} is not finite"));
            }
            if let Ok(scene) = story.scene(*id) {
                if item.history_slots != expected_slots(scene) {
                    out.push(format!("history slots of {id} are out of sync"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.axis_y) {
            out.push(format!("axis_y {} is outside [0, 1]", self.axis_y));
        }
        if let Err(e) = self.check_order(&story.metaphorical_order()) {
            out.push(e.to_string());
        }
        out
    }
}

fn expected_slots(scene: &Scene) -> Vec<GenerationId> {
    scene
        .generations
        .iter()
        .map(|g| g.id)
        .filter(|id| Some(*id) != scene.displayed_generation)
        .collect()
}

//! On-disk story bundles and playback manifests.
//!
//! ```text
//! <data_dir>/stories/<story_id>/story.json       full Story, pretty JSON
//! <data_dir>/stories/<story_id>/images/<sha256>.<ext>
//! <data_dir>/stories/<story_id>/playback.json    written on export
//! ```
//!
//! Image files are the provider's bytes unchanged, named by the lowercase
//! hex SHA-256 of those bytes.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::palette::Color;
use crate::story::{BubbleShape, ImageRef, SceneId, SceneKind, Story, StoryId, SCHEMA_VERSION};

pub const STORY_FILE: &str = "story.json";
pub const PLAYBACK_FILE: &str = "playback.json";
pub const IMAGES_DIR: &str = "images";
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "webp", "bin"];

fn image_extension(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "png",
        Ok(image::ImageFormat::Jpeg) => "jpg",
        Ok(image::ImageFormat::WebP) => "webp",
        _ => "bin",
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Every image ref a story mentions, deduplicated.
pub fn referenced_images(story: &Story) -> BTreeSet<ImageRef> {
    let mut refs = BTreeSet::new();
    for scene in &story.scenes {
        for g in &scene.generations {
            refs.insert(g.image_ref.clone());
        }
        for p in &scene.palettes {
            refs.insert(p.palette.source_image.clone());
        }
    }
    refs
}

fn find_image_in(bundle: &Path, image_ref: &ImageRef) -> Option<PathBuf> {
    let dir = bundle.join(IMAGES_DIR);
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{image_ref}.{ext}")))
        .find(|p| p.is_file())
}

/// Reads the story file in `bundle`, checking the schema version before
/// deserializing the rest.
fn read_story_file(bundle: &Path) -> Result<Story> {
    let path = bundle.join(STORY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptBundle(format!("{}: {e}", path.display())))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptBundle(format!("{}: missing schema_version", path.display())))?;
    if found > u64::from(SCHEMA_VERSION) {
        return Err(Error::UnsupportedSchema {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            supported: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value)
        .map_err(|e| Error::CorruptBundle(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackFrame {
    pub scene_id: SceneId,
    pub position: usize,
    pub kind: SceneKind,
    pub bubble: BubbleShape,
    /// The author's own text.
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depiction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_color: Option<Color>,
    /// Set on metaphorical frames that have no image to show yet.
    #[serde(default)]
    pub missing_image: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackManifest {
    pub story_id: StoryId,
    pub title: String,
    pub schema_version: u32,
    pub frames: Vec<PlaybackFrame>,
}

/// One frame per scene in position order.
pub fn export_playback(story: &Story) -> PlaybackManifest {
    let frames = story
        .scenes
        .iter()
        .map(|scene| {
            let mut frame = PlaybackFrame {
                scene_id: scene.id,
                position: scene.position,
                kind: scene.kind,
                bubble: scene.bubble_shape(),
                text: scene.text.clone(),
                depiction: None,
                image_ref: None,
                filter_color: None,
                missing_image: false,
            };
            if scene.is_metaphorical() {
                frame.depiction = scene.current_depiction().map(|d| d.text.clone());
                frame.image_ref = scene.displayed().map(|g| g.image_ref.clone());
                frame.filter_color = scene.active_filter().map(|f| f.color);
                frame.missing_image = frame.image_ref.is_none();
            }
            frame
        })
        .collect();
    PlaybackManifest {
        story_id: story.id,
        title: story.title.clone(),
        schema_version: SCHEMA_VERSION,
        frames,
    }
}

/// Result of [`validate_bundle`]. Clean when `violations` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub path: PathBuf,
    pub story_id: Option<StoryId>,
    pub violations: Vec<String>,
}

impl BundleReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a bundle directory (or its story file) without trusting it:
/// parse errors, story invariants, dangling image refs and image files
/// whose content does not match their name are all reported.
pub fn validate_bundle(path: &Path) -> BundleReport {
    let bundle = if path.is_file() {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        path.to_path_buf()
    };
    let mut report = BundleReport {
        path: bundle.clone(),
        story_id: None,
        violations: Vec::new(),
    };
    let story = match read_story_file(&bundle) {
        Ok(story) => story,
        Err(e) => {
            report.violations.push(format!("parse: {e}"));
            return report;
        }
    };
    report.story_id = Some(story.id);
    report.violations.extend(story.violations());
    for image_ref in referenced_images(&story) {
        if find_image_in(&bundle, &image_ref).is_none() {
            report
                .violations
                .push(format!("dangling image ref {image_ref}: no file in {IMAGES_DIR}/"));
        }
    }
    if let Ok(entries) = std::fs::read_dir(bundle.join(IMAGES_DIR)) {
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            match std::fs::read(&p) {
                Ok(bytes) if ImageRef::from_bytes(&bytes).as_str() != stem => report
                    .violations
                    .push(format!("image {} does not hash to its name", p.display())),
                Err(e) => report.violations.push(format!("image {}: {e}", p.display())),
                Ok(_) => {}
            }
        }
    }
    report
}

/// Bundle storage under one data directory. Saves to the same story are
/// serialized; different stories may be saved concurrently.
#[derive(Debug)]
pub struct BundleStore {
    root: PathBuf,
    locks: Mutex<HashMap<StoryId, Arc<Mutex<()>>>>,
}

impl BundleStore {
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self> {
        let root: PathBuf = data_dir.into();
        let stories = root.join("stories");
        std::fs::create_dir_all(&stories).map_err(|e| Error::io(&stories, e))?;
        Ok(Self {
            root,
            locks: Mutex::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn bundle_dir(&self, id: StoryId) -> PathBuf {
        self.root.join("stories").join(id.to_string())
    }

    fn lock_for(&self, id: StoryId) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .expect("store lock table")
            .entry(id)
            .or_default()
            .clone()
    }

    /// Stores image bytes in the story's bundle unchanged and returns their
    /// content address. Storing the same bytes twice is a no-op.
    pub fn put_image(&self, story: StoryId, bytes: &[u8]) -> Result<ImageRef> {
        let image_ref = ImageRef::from_bytes(bytes);
        let bundle = self.bundle_dir(story);
        if find_image_in(&bundle, &image_ref).is_none() {
            let path = bundle
                .join(IMAGES_DIR)
                .join(format!("{image_ref}.{}", image_extension(bytes)));
            write_atomic(&path, bytes)?;
        }
        Ok(image_ref)
    }

    pub fn image_path(&self, story: StoryId, image_ref: &ImageRef) -> Option<PathBuf> {
        find_image_in(&self.bundle_dir(story), image_ref)
    }

    pub fn read_image(&self, story: StoryId, image_ref: &ImageRef) -> Result<Vec<u8>> {
        let path = self
            .image_path(story, image_ref)
            .ok_or_else(|| Error::UnknownImage(image_ref.to_string()))?;
        std::fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    /// Validates the story, checks that every image it references is in the
    /// bundle, then replaces the story file atomically.
    pub fn save_story(&self, story: &Story) -> Result<PathBuf> {
        story.validate()?;
        let bundle = self.bundle_dir(story.id);
        if let Some(missing) = referenced_images(story)
            .into_iter()
            .find(|r| find_image_in(&bundle, r).is_none())
        {
            return Err(Error::IoFailure {
                path: bundle.join(IMAGES_DIR),
                message: format!("missing image bytes for ref {missing}"),
            });
        }
        let json = serde_json::to_vec_pretty(story)
            .map_err(|e| Error::io(bundle.join(STORY_FILE), e))?;
        let lock = self.lock_for(story.id);
        let _guard = lock.lock().expect("story save lock");
        write_atomic(&bundle.join(STORY_FILE), &json)?;
        Ok(bundle)
    }

    /// Loads and fully validates a bundle, given its directory or story file.
    pub fn load_path(path: &Path) -> Result<Story> {
        let bundle = if path.is_file() {
            path.parent().unwrap_or(Path::new("."))
        } else {
            path
        };
        let story = read_story_file(bundle)?;
        story.validate()?;
        if let Some(missing) = referenced_images(&story)
            .into_iter()
            .find(|r| find_image_in(bundle, r).is_none())
        {
            return Err(Error::CorruptBundle(format!("dangling image ref {missing}")));
        }
        Ok(story)
    }

    pub fn load_story(&self, id: StoryId) -> Result<Story> {
        let bundle = self.bundle_dir(id);
        if !bundle.join(STORY_FILE).is_file() {
            return Err(Error::UnknownStory(id.to_string()));
        }
        Self::load_path(&bundle)
    }

    /// Loads every bundle under the data directory. Bundles that fail to
    /// load are returned separately rather than aborting the scan.
    pub fn load_all(&self) -> (Vec<Story>, Vec<(PathBuf, Error)>) {
        let mut stories = Vec::new();
        let mut failures = Vec::new();
        let dir = self.root.join("stories");
        let Ok(entries) = std::fs::read_dir(&dir) else {
            return (stories, failures);
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(STORY_FILE).is_file())
            .collect();
        paths.sort();
        for path in paths {
            match Self::load_path(&path) {
                Ok(story) => stories.push(story),
                Err(e) => failures.push((path, e)),
            }
        }
        (stories, failures)
    }

    /// Writes the playback manifest next to the story file for sharing.
    pub fn write_playback(&self, story: &Story) -> Result<PathBuf> {
        let manifest = export_playback(story);
        let path = self.bundle_dir(story.id).join(PLAYBACK_FILE);
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::io(&path, e))?;
        write_atomic(&path, &json)?;
        Ok(path)
    }
}

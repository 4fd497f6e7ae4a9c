//! A four-scene example story built with the offline mock providers.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layout::{ItemEdit, Offset};
use crate::story::{MeaningType, MetaphorSpec, SceneKind, Story, VisualStructure};
use crate::studio::{ScenePatch, Studio};

pub const DEMO_TITLE: &str = "A reunion by the sea";

const OPENING: &str = "I was at a class reunion held on a wide sandy beach. \
People I had not seen in years were laughing around a bonfire.";
const FIRST_SCENE: &str = "Someone I had a crush on long ago walked over and took both of my hands.";
const SECOND_SCENE: &str = "We hugged and then kissed, while the others pretended not to look.";
const ENDING: &str = "The tide came in and everyone drifted away. I woke up before I could say goodbye.";

struct Beat {
    text: &'static str,
    affective: &'static str,
    adjectives: &'static [&'static str],
    concept: &'static str,
    meaning: MeaningType,
    structure: VisualStructure,
    extra: Option<&'static str>,
}

const BEATS: [Beat; 2] = [
    Beat {
        text: FIRST_SCENE,
        affective: "old crush holding my hands",
        adjectives: &["exciting"],
        concept: "Electric Sparks",
        meaning: MeaningType::Connection,
        structure: VisualStructure::Fusion,
        extra: Some("sunset on the beach"),
    },
    Beat {
        text: SECOND_SCENE,
        affective: "hugging and kissing",
        adjectives: &["thrilling", "worrying"],
        concept: "Embracing Flames",
        meaning: MeaningType::Similarity,
        structure: VisualStructure::Juxtaposition,
        extra: None,
    },
];

/// Builds the example story in `studio`: literal opening, two metaphorical
/// scenes taken through suggestion, generation and acceptance, a literal
/// ending, and a couple of layout edits.
pub async fn seed_demo_story(studio: &Studio) -> Result<Arc<Story>> {
    let story = studio.create_story(DEMO_TITLE).await?;
    let id = story.id;

    let opening = studio.add_scene(id, SceneKind::Literal, None).await?;
    studio
        .patch_scene(opening.id, ScenePatch { text: Some(OPENING.into()), metaphor: None })
        .await?;

    let mut metaphorical = Vec::new();
    for beat in &BEATS {
        let scene = studio.add_scene(id, SceneKind::Metaphorical, None).await?;
        let mut spec = MetaphorSpec {
            affective_element: beat.affective.into(),
            adjectives: beat.adjectives.iter().map(|s| s.to_string()).collect(),
            metaphor_concept: String::new(),
            meaning_type: beat.meaning,
            visual_structure: beat.structure,
            extra_prompt: beat.extra.map(Into::into),
        };
        studio
            .patch_scene(
                scene.id,
                ScenePatch { text: Some(beat.text.into()), metaphor: Some(spec.clone()) },
            )
            .await?;
        let suggestions = studio.request_suggestions(scene.id, None, None).await?;
        let picked = suggestions
            .iter()
            .find(|s| s.concept == beat.concept)
            .or(suggestions.first())
            .ok_or(Error::UnparseableResponse)?;
        spec.metaphor_concept = picked.concept.clone();
        studio
            .patch_scene(scene.id, ScenePatch { text: None, metaphor: Some(spec) })
            .await?;
        let first = studio.request_generation(scene.id, None).await?;
        // A second try stays in the history as an alternative.
        studio.request_generation(scene.id, Some(1)).await?;
        let outcome = studio.finalize_acceptance(scene.id, first.id).await?;
        if let Some(err) = outcome.depiction_error {
            return Err(Error::InvalidRequest(format!("demo depiction failed: {}", err.message)));
        }
        metaphorical.push(scene.id);
    }

    let ending = studio.add_scene(id, SceneKind::Literal, None).await?;
    studio
        .patch_scene(ending.id, ScenePatch { text: Some(ENDING.into()), metaphor: None })
        .await?;

    // Enlarge the more intense moment and lift its image a little.
    let edits = [ItemEdit {
        scene_id: metaphorical[1],
        anchor_x: Some(0.7),
        image_offset: Some(Offset { dx: 0.05, dy: 0.25 }),
        scale: Some(1.5),
    }];
    studio.edit_layout(id, &edits, None).await?;
    studio.export_playback_file(id)?;
    studio.story(id)
}

/// Seeds the example story into `data_dir` using mock providers and returns
/// the bundle directory.
pub async fn seed_demo(data_dir: &Path) -> Result<PathBuf> {
    let studio = Studio::mock(data_dir)?;
    let story = seed_demo_story(&studio).await?;
    Ok(studio.store().bundle_dir(story.id))
}

//! Prompt construction from a [`MetaphorSpec`] and parsing of provider
//! replies. Everything here is a pure function of the templates and inputs.

mod suggestions;
pub mod template;

pub use suggestions::{parse_suggestions, render_numbered_list, MetaphorSuggestion, MAX_CONCEPT_WORDS};
pub use template::Templates;

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::story::{MeaningType, MetaphorSpec, VisualStructure};

pub const DEFAULT_SUGGESTION_COUNT: usize = 5;
pub const DEPICTION_WORD_CAP: usize = 60;

/// A built prompt. Chat providers send `role_preamble` as the system message
/// and `body` as the user message; image providers receive `full`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub role_preamble: String,
    pub body: String,
    pub full: String,
}

impl PromptText {
    fn new(role_preamble: String, body: String) -> Self {
        let full = format!("{role_preamble}\n\n{body}");
        Self {
            role_preamble,
            body,
            full,
        }
    }
}

fn relation_section(meaning: MeaningType) -> &'static str {
    match meaning {
        MeaningType::Connection => "relation.connection",
        MeaningType::Similarity => "relation.similarity",
        MeaningType::Opposition => "relation.opposition",
    }
}

fn structure_section(structure: VisualStructure) -> &'static str {
    match structure {
        VisualStructure::Juxtaposition => "structure.juxtaposition",
        VisualStructure::Fusion => "structure.fusion",
        VisualStructure::Replacement => "structure.replacement",
    }
}

/// Trailing whitespace left by empty optional placeholders is dropped.
fn tidy(text: String) -> String {
    text.lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim_end()
        .to_owned()
}

#[derive(Debug, Clone, Default)]
pub struct MetaphorEngine {
    templates: Templates,
}

impl MetaphorEngine {
    pub fn new(templates: Templates) -> Self {
        Self { templates }
    }

    pub fn from_template_file(path: &Path) -> Result<Self> {
        Ok(Self::new(Templates::load(path)?))
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    /// Asks for `count` metaphors related to the feeling by `meaning`.
    /// Only the affective element and adjectives need to be filled in.
    pub fn suggestion_prompt(
        &self,
        spec: &MetaphorSpec,
        meaning: MeaningType,
        count: usize,
    ) -> Result<PromptText> {
        spec.check_affect()?;
        if count == 0 {
            return Err(Error::InvalidSpec("suggestion count must be at least 1".into()));
        }
        let adjectives = spec.adjective_phrase();
        let relation = self.templates.section(relation_section(meaning));
        let count = count.to_string();
        let vars = [
            ("affective_element", spec.affective_element.as_str()),
            ("adjectives", adjectives.as_str()),
            ("relation", relation),
            ("count", count.as_str()),
        ];
        Ok(PromptText::new(
            self.templates.render("suggestion.preamble", &vars)?,
            tidy(self.templates.render("suggestion.body", &vars)?),
        ))
    }

    /// Text-to-image prompt composed according to the spec's visual
    /// structure and meaning type.
    pub fn image_prompt(&self, spec: &MetaphorSpec) -> Result<PromptText> {
        spec.check_complete()?;
        let adjectives = spec.adjective_phrase();
        let relation = self.templates.section(relation_section(spec.meaning_type));
        let base = [
            ("affective_element", spec.affective_element.as_str()),
            ("adjectives", adjectives.as_str()),
            ("concept", spec.metaphor_concept.as_str()),
            ("relation", relation),
        ];
        let directive = self
            .templates
            .render(structure_section(spec.visual_structure), &base)?;
        let extra = match spec.extra_prompt.as_deref().map(str::trim) {
            Some(text) if !text.is_empty() => self.templates.render("image.extra", &[("extra", text)])?,
            _ => String::new(),
        };
        let mut vars = base.to_vec();
        vars.push(("structure_directive", directive.as_str()));
        vars.push(("extra", extra.as_str()));
        Ok(PromptText::new(
            self.templates.render("image.preamble", &vars)?,
            tidy(self.templates.render("image.body", &vars)?),
        ))
    }

    /// Request for a short first-person depiction of the accepted metaphor.
    pub fn depiction_prompt(&self, spec: &MetaphorSpec) -> Result<PromptText> {
        spec.check_complete()?;
        let adjectives = spec.adjective_phrase();
        let vars = [
            ("affective_element", spec.affective_element.as_str()),
            ("adjectives", adjectives.as_str()),
            ("concept", spec.metaphor_concept.as_str()),
        ];
        Ok(PromptText::new(
            self.templates.render("depiction.preamble", &vars)?,
            tidy(self.templates.render("depiction.body", &vars)?),
        ))
    }
}

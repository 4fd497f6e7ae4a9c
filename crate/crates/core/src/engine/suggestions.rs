use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_CONCEPT_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaphorSuggestion {
    pub concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

const QUOTES: [(char, char); 5] = [('"', '"'), ('“', '”'), ('\'', '\''), ('‘', '’'), ('«', '»')];
const SEPARATORS: [&str; 4] = [": ", " - ", " – ", " — "];

/// Strips a list marker ("1.", "2)", "-", "*", "•") and returns the item
/// text, or `None` for lines that are not list items.
fn list_item(line: &str) -> Option<&str> {
    let line = line.trim();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &line[digits..];
        let rest = rest.strip_prefix(['.', ')', ':'])?;
        return (rest.is_empty() || rest.starts_with(char::is_whitespace)).then(|| rest.trim());
    }
    for bullet in ['-', '*', '•', '–'] {
        if let Some(rest) = line.strip_prefix(bullet) {
            if rest.starts_with(char::is_whitespace) {
                return Some(rest.trim());
            }
        }
    }
    None
}

fn strip_emphasis(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let next = s
            .strip_prefix("**")
            .and_then(|t| t.strip_suffix("**"))
            .or_else(|| s.strip_prefix('_').and_then(|t| t.strip_suffix('_')));
        match next {
            Some(t) => s = t.trim(),
            None => return s,
        }
    }
}

fn clean_concept(s: &str) -> String {
    let s = strip_emphasis(s);
    let s = s.trim_end_matches(|c: char| c.is_whitespace() || ".,;:!?".contains(c));
    let s = QUOTES
        .iter()
        .find_map(|(open, close)| s.strip_prefix(*open).and_then(|t| t.strip_suffix(*close)))
        .unwrap_or(s);
    s.trim().to_owned()
}

fn split_item(item: &str) -> (String, Option<String>) {
    let item = strip_emphasis(item);
    // Quoted concept, possibly followed by an explanation.
    for (open, close) in QUOTES {
        if let Some(rest) = item.strip_prefix(open) {
            if let Some(end) = rest.find(close) {
                let concept = clean_concept(&rest[..end]);
                let tail = rest[end + close.len_utf8()..]
                    .trim_start_matches(|c: char| c.is_whitespace() || ":-–—,.".contains(c))
                    .trim();
                let rationale = (!tail.is_empty()).then(|| tail.to_owned());
                return (concept, rationale);
            }
        }
    }
    let split = SEPARATORS
        .iter()
        .filter_map(|sep| item.find(sep).map(|pos| (pos, sep.len())))
        .min();
    match split {
        Some((pos, len)) => {
            let rationale = item[pos + len..].trim();
            (
                clean_concept(&item[..pos]),
                (!rationale.is_empty()).then(|| rationale.to_owned()),
            )
        }
        None => (clean_concept(item), None),
    }
}

/// Parses a numbered or bulleted list of metaphor suggestions, in response
/// order. Items that end up empty or longer than
/// [`MAX_CONCEPT_WORDS`] words are dropped.
pub fn parse_suggestions(response: &str) -> Result<Vec<MetaphorSuggestion>> {
    let suggestions: Vec<MetaphorSuggestion> = response
        .lines()
        .filter_map(list_item)
        .map(split_item)
        .filter(|(concept, _)| {
            let words = concept.split_whitespace().count();
            words > 0 && words <= MAX_CONCEPT_WORDS
        })
        .map(|(concept, rationale)| MetaphorSuggestion { concept, rationale })
        .collect();
    if suggestions.is_empty() {
        Err(Error::UnparseableResponse)
    } else {
        Ok(suggestions)
    }
}

/// `1. first\n2. second...`, the format the suggestion prompt asks for.
pub fn render_numbered_list<S: AsRef<str>>(items: &[S]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
        .collect::<Vec<_>>()
        .join("\n")
}

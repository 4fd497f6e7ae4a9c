//! Versioned plain-text prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const SUPPORTED_VERSION: u32 = 1;

/// Placeholders a template may reference.
pub const PLACEHOLDERS: [&str; 7] = [
    "affective_element",
    "adjectives",
    "concept",
    "structure_directive",
    "extra",
    "relation",
    "count",
];

pub const SECTIONS: [&str; 13] = [
    "suggestion.preamble",
    "suggestion.body",
    "image.preamble",
    "image.body",
    "image.extra",
    "depiction.preamble",
    "depiction.body",
    "relation.connection",
    "relation.similarity",
    "relation.opposition",
    "structure.juxtaposition",
    "structure.fusion",
    "structure.replacement",
];

/// The template file compiled into the binary.
pub const BUILTIN: &str = include_str!("../../templates/prompts.v1.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub version: u32,
    sections: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Templates::parse(BUILTIN).expect("builtin templates are valid")
    }
}

impl Templates {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut sections: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;

        let mut finish = |current: &mut Option<(String, Vec<&str>)>| -> Result<()> {
            if let Some((name, lines)) = current.take() {
                let body = lines.join("\n").trim().to_owned();
                if sections.insert(name.clone(), body).is_some() {
                    return Err(Error::Template(format!("section {name} appears twice")));
                }
            }
            Ok(())
        };

        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if let Some(name) = trimmed
                .strip_prefix("==")
                .and_then(|rest| rest.strip_suffix("=="))
            {
                finish(&mut current)?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Template(format!(
                        "line {}: unknown section {name:?}",
                        lineno + 1
                    )));
                }
                current = Some((name.to_owned(), Vec::new()));
                continue;
            }
            match &mut current {
                Some((_, lines)) => lines.push(line),
                None => {
                    if let Some(v) = trimmed.strip_prefix("@version") {
                        let v: u32 = v.trim().parse().map_err(|_| {
                            Error::Template(format!("line {}: bad version", lineno + 1))
                        })?;
                        version = Some(v);
                    } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                        return Err(Error::Template(format!(
                            "line {}: text outside a section",
                            lineno + 1
                        )));
                    }
                }
            }
        }
        finish(&mut current)?;

        let version = version.ok_or_else(|| Error::Template("missing @version".into()))?;
        if version != SUPPORTED_VERSION {
            return Err(Error::Template(format!(
                "template version {version} is not supported (expected {SUPPORTED_VERSION})"
            )));
        }
        for name in SECTIONS {
            let body = sections
                .get(name)
                .ok_or_else(|| Error::Template(format!("missing section {name}")))?;
            for placeholder in placeholders(body)? {
                if !PLACEHOLDERS.contains(&placeholder.as_str()) {
                    return Err(Error::Template(format!(
                        "section {name} uses unknown placeholder {{{placeholder}}}"
                    )));
                }
            }
        }
        Ok(Self { version, sections })
    }

    pub fn section(&self, name: &str) -> &str {
        self.sections.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn render(&self, section: &str, vars: &[(&str, &str)]) -> Result<String> {
        render(self.section(section), vars)
    }
}

fn placeholders(template: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    scan(template, |piece| {
        if let Piece::Placeholder(name) = piece {
            names.push(name.to_owned());
        }
        Ok(())
    })?;
    Ok(names)
}

enum Piece<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn scan<'a>(template: &'a str, mut emit: impl FnMut(Piece<'a>) -> Result<()>) -> Result<()> {
    let mut rest = template;
    while !rest.is_empty() {
        let Some(pos) = rest.find(['{', '}']) else {
            emit(Piece::Text(rest))?;
            break;
        };
        emit(Piece::Text(&rest[..pos]))?;
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            emit(Piece::Text("{"))?;
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            emit(Piece::Text("}"))?;
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(Error::Template("unmatched '}'".into()));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| Error::Template("unclosed '{'".into()))?;
            emit(Piece::Placeholder(&tail[1..end]))?;
            rest = &tail[end + 1..];
        }
    }
    Ok(())
}

/// Substitutes `{name}` placeholders. Referencing a name missing from `vars`
/// is an error.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 64);
    scan(template, |piece| {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Placeholder(name) => {
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::Template(format!("no value for {{{name}}}")))?;
                out.push_str(value);
            }
        }
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parses() {
        let t = Templates::default();
        assert_eq!(t.version, 1);
        assert_eq!(t.section("relation.similarity"), "similar to");
    }

    #[test]
    fn render_substitutes_and_escapes() {
        let s = render("{a} and {{b}} {a}", &[("a", "x")]).unwrap();
        assert_eq!(s, "x and {b} x");
    }

    #[test]
    fn render_missing_var_fails() {
        assert!(render("{a}", &[]).is_err());
        assert!(render("{a", &[("a", "x")]).is_err());
        assert!(render("a}", &[]).is_err());
    }

    #[test]
    fn unknown_placeholder_rejected_at_load() {
        let text = BUILTIN.replace("{count} vivid", "{number} vivid");
        assert!(matches!(Templates::parse(&text), Err(Error::Template(_))));
    }

    #[test]
    fn newer_version_rejected() {
        let text = BUILTIN.replace("@version 1", "@version 2");
        assert!(Templates::parse(&text).is_err());
    }

    #[test]
    fn missing_section_rejected() {
        let text = BUILTIN.replace("== image.extra ==", "== image.extraa ==");
        assert!(Templates::parse(&text).is_err());
    }
}

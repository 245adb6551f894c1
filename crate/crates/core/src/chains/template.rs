//! Prompt templates with `{name}` placeholders.
//!
//! A placeholder is `{` + one of the known names + `}`. Any other brace
//! sequence that looks like an identifier (`{foo}`) is rejected when the
//! template is loaded; braces around anything else (`{ "a": 1 }`) are
//! literal text. Rendering is a single left-to-right pass: substituted
//! values are never scanned again.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::ChainKind;

pub const PLACEHOLDERS: [&str; 6] = ["sentence", "target", "analysis", "reflection", "hop1", "hop2"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template:?} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("missing value for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("template {template:?} may not use {{{name}}}")]
    DisallowedPlaceholder { template: String, name: String },
    #[error("template {template:?} must use {{{name}}}")]
    RequiredPlaceholder { template: String, name: String },
    #[error("template set has no {0:?} template")]
    MissingTemplate(String),
    #[error("cannot read templates from {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Var(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    segments: Vec<Segment>,
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_'
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let mut segments = Vec::new();
        let bytes = body.as_bytes();
        let mut literal_start = 0;
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'{' {
                let ident_len = bytes[i + 1..].iter().take_while(|&&b| is_ident_byte(b)).count();
                let close = i + 1 + ident_len;
                if ident_len > 0 && bytes.get(close) == Some(&b'}') {
                    let ident = &body[i + 1..close];
                    let var = PLACEHOLDERS.iter().copied().find(|p| *p == ident).ok_or_else(|| {
                        TemplateError::UnknownPlaceholder {
                            template: name.clone(),
                            name: ident.to_string(),
                        }
                    })?;
                    if literal_start < i {
                        segments.push(Segment::Literal(body[literal_start..i].to_string()));
                    }
                    segments.push(Segment::Var(var));
                    i = close + 1;
                    literal_start = i;
                    continue;
                }
            }
            i += 1;
        }
        if literal_start < bytes.len() {
            segments.push(Segment::Literal(body[literal_start..].to_string()));
        }
        Ok(PromptTemplate { name, body, segments })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> BTreeSet<&'static str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Var(v) => Some(*v),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    pub fn uses(&self, placeholder: &str) -> bool {
        self.placeholders().contains(placeholder)
    }

    pub fn render<V: AsRef<str>>(&self, vars: &BTreeMap<&str, V>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Var(v) => {
                    let value = vars.get(v).ok_or_else(|| TemplateError::MissingPlaceholder(v.to_string()))?;
                    out.push_str(value.as_ref());
                }
            }
        }
        Ok(out)
    }
}

/// Renders `template` with `vars`.
pub fn render<V: AsRef<str>>(template: &PromptTemplate, vars: &BTreeMap<&str, V>) -> Result<String, TemplateError> {
    template.render(vars)
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "direct",
    "thor_aspect",
    "thor_opinion",
    "thor_polarity",
    "saot_analyze",
    "saot_reflect",
    "saot_reflect_independent",
    "saot_infer",
);

/// Strips one trailing line break so files saved by editors render the
/// same as their in-memory counterparts.
fn normalize(body: &str) -> &str {
    body.strip_suffix("\r\n").or_else(|| body.strip_suffix('\n')).unwrap_or(body)
}

/// Named collection of templates, one per chain step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

struct Requirement {
    name: &'static str,
    allowed: &'static [&'static str],
    required: &'static [&'static str],
}

const BASE: &[&str] = &["sentence", "target"];

impl TemplateSet {
    /// The templates shipped in the crate's `templates/` directory.
    pub fn builtin() -> Self {
        let mut set = TemplateSet::default();
        for (name, body) in BUILTIN {
            set.insert(PromptTemplate::new(*name, normalize(body)).expect("builtin templates are valid"));
        }
        set
    }

    /// Loads every `*.txt` file in `dir`; the file stem is the template name.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let io = |e: std::io::Error| TemplateError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut set = TemplateSet::default();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            set.insert(PromptTemplate::new(name, normalize(&body))?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name.clone(), template);
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::MissingTemplate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Hex SHA-256 over every `(name, body)` pair in name order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.templates {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.body.len() as u64).to_le_bytes());
            h.update(t.body.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Name of the reflect template used in the given mode.
    pub fn reflect_template_name(&self, independent_reflect: bool) -> &'static str {
        if independent_reflect && self.templates.contains_key("saot_reflect_independent") {
            "saot_reflect_independent"
        } else {
            "saot_reflect"
        }
    }

    /// Checks that every template `chain` needs is present and only uses
    /// placeholders whose values exist at that step.
    pub fn check(&self, chain: ChainKind, independent_reflect: bool) -> Result<(), TemplateError> {
        let reqs: Vec<Requirement> = match chain {
            ChainKind::Direct => vec![Requirement {
                name: "direct",
                allowed: BASE,
                required: &[],
            }],
            ChainKind::Thor => vec![
                Requirement {
                    name: "thor_aspect",
                    allowed: BASE,
                    required: &[],
                },
                Requirement {
                    name: "thor_opinion",
                    allowed: &["sentence", "target", "hop1"],
                    required: &[],
                },
                Requirement {
                    name: "thor_polarity",
                    allowed: &["sentence", "target", "hop1", "hop2"],
                    required: &[],
                },
            ],
            ChainKind::Saot => vec![
                Requirement {
                    name: "saot_analyze",
                    allowed: BASE,
                    required: &[],
                },
                Requirement {
                    name: self.reflect_template_name(independent_reflect),
                    allowed: if independent_reflect {
                        BASE
                    } else {
                        &["sentence", "target", "analysis"]
                    },
                    required: &[],
                },
                Requirement {
                    name: "saot_infer",
                    allowed: &["sentence", "target", "analysis", "reflection"],
                    required: &["analysis", "reflection"],
                },
            ],
        };
        for req in reqs {
            let t = self.get(req.name)?;
            let used = t.placeholders();
            if let Some(bad) = used.iter().find(|p| !req.allowed.contains(p)) {
                return Err(TemplateError::DisallowedPlaceholder {
                    template: req.name.to_string(),
                    name: bad.to_string(),
                });
            }
            if let Some(missing) = req.required.iter().find(|p| !used.contains(*p)) {
                return Err(TemplateError::RequiredPlaceholder {
                    template: req.name.to_string(),
                    name: missing.to_string(),
                });
            }
        }
        Ok(())
    }
}

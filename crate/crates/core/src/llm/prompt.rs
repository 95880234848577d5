use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotationRecord, AttrMap, AttributeKey, AttributeSchema, Side};
use crate::error::{Error, Result};

const FULL_PERSONA: &str = include_str!("../../config/prompts/full_persona.txt");
const SINGLE_ATTRIBUTE: &str = include_str!("../../config/prompts/single_attribute.txt");
const SIMPLIFIED: &str = include_str!("../../config/prompts/simplified.txt");

const PERSONA_PARAGRAPH: &str = "In performing the task";
const UNSPECIFIED: &str = "unspecified";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    FullPersona,
    SingleAttribute,
    Simplified,
}

impl TemplateId {
    pub const ALL: [TemplateId; 3] = [TemplateId::FullPersona, TemplateId::SingleAttribute, TemplateId::Simplified];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::FullPersona => "full_persona",
            TemplateId::SingleAttribute => "single_attribute",
            TemplateId::Simplified => "simplified",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown template `{s}`")))
    }
}

/// Annotator-side attributes an LLM is asked to impersonate.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub attrs: AttrMap,
}

impl PersonaProfile {
    pub fn new(attrs: AttrMap, schema: &AttributeSchema) -> Result<Self> {
        for (key, vals) in &attrs {
            if !key.annotator_side() {
                return Err(Error::Schema(format!("persona attribute `{key}` is target-only")));
            }
            if let Some(v) = vals.iter().find(|v| schema.value_index(*key, v).is_none()) {
                return Err(Error::Schema(format!("persona {key} value `{v}` is not in the vocabulary")));
            }
        }
        Ok(PersonaProfile::from_attrs(attrs))
    }

    fn from_attrs(mut attrs: AttrMap) -> Self {
        attrs.retain(|_, v| !v.is_empty());
        PersonaProfile { attrs }
    }

    pub fn of(record: &AnnotationRecord) -> Self {
        PersonaProfile::from_attrs(record.annotator_attrs.clone())
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    /// Stable content hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, vals) in &self.attrs {
            h.update(k.name());
            for v in vals {
                h.update([0]);
                h.update(v);
            }
            h.update([1]);
        }
        hex::encode(&h.finalize()[..16])
    }

    fn values(&self, key: AttributeKey) -> Option<&BTreeSet<String>> {
        self.attrs.get(&key)
    }
}

/// `target_<key>_<value>` identifiers for every selectable target value.
pub fn target_list(schema: &AttributeSchema) -> Vec<String> {
    AttributeKey::for_side(Side::Target)
        .flat_map(|key| {
            schema
                .allowed_values(key)
                .iter()
                .filter(move |v| !schema.is_excluded(Side::Target, key, v))
                .map(move |v| format!("target_{}_{}", key.name(), v.replace(' ', "_")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    pub fn builtin(id: TemplateId) -> Self {
        let body = match id {
            TemplateId::FullPersona => FULL_PERSONA,
            TemplateId::SingleAttribute => SINGLE_ATTRIBUTE,
            TemplateId::Simplified => SIMPLIFIED,
        };
        PromptTemplate {
            id,
            body: body.to_string(),
        }
    }

    pub fn load(id: TemplateId, path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(PromptTemplate { id, body })
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for_each_token(&self.body, |tok| {
            if let Token::Placeholder(name) = tok {
                out.push(name);
            }
        });
        out
    }

    pub fn render(&self, persona: &PersonaProfile, post_text: &str, targets: &[String], seed: u64) -> Result<String> {
        render_body(&self.body, persona, post_text, targets, seed)
    }

    /// The same prompt without the impersonation paragraph.
    pub fn render_base(&self, post_text: &str, targets: &[String]) -> Result<String> {
        render_body(&strip_persona(&self.body), &PersonaProfile::default(), post_text, targets, 0)
    }
}

fn strip_persona(body: &str) -> String {
    let mut out = Vec::new();
    let mut skipping = false;
    for line in body.split('\n') {
        if line.starts_with(PERSONA_PARAGRAPH) {
            skipping = true;
            continue;
        }
        if skipping {
            if line.trim().is_empty() {
                skipping = false;
            }
            continue;
        }
        out.push(line);
    }
    out.join("\n")
}

enum Token<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

fn for_each_token<'a>(body: &'a str, mut f: impl FnMut(Token<'a>)) {
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_name(&after[..close]) => {
                f(Token::Text(&rest[..open]));
                f(Token::Placeholder(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                f(Token::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    f(Token::Text(rest));
}

fn joined(vals: Option<&BTreeSet<String>>) -> String {
    match vals {
        Some(v) if !v.is_empty() => v.iter().map(String::as_str).collect::<Vec<_>>().join(", "),
        _ => UNSPECIFIED.to_string(),
    }
}

fn age_range(v: &str) -> &str {
    match v {
        "children" => "0-12",
        "teenagers" => "13-19",
        "young adults" => "20-39",
        "middle aged" => "40-59",
        "seniors" => "60 or more",
        other => other,
    }
}

fn line(persona: &PersonaProfile, key: AttributeKey) -> String {
    format!("annotator_{}: {}", key.name(), joined(persona.values(key)))
}

fn random_feature(persona: &PersonaProfile, post_text: &str, seed: u64) -> String {
    let keys: Vec<AttributeKey> = persona.attrs.keys().copied().collect();
    if keys.is_empty() {
        return UNSPECIFIED.to_string();
    }
    let mut h = Sha256::new();
    h.update(persona.hash());
    h.update([0]);
    h.update(post_text);
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    let pick = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as usize % keys.len();
    line(persona, keys[pick])
}

fn resolve(name: &str, persona: &PersonaProfile, post_text: &str, targets: &[String], seed: u64) -> Option<String> {
    use AttributeKey::*;
    Some(match name {
        "annotator_gender" => joined(persona.values(Gender)),
        "annotator_educ" => joined(persona.values(Education)),
        "annotator_income" => joined(persona.values(Income)),
        "annotator_ideology" => joined(persona.values(Ideology)),
        "annotator_age" => match persona.values(Age) {
            Some(v) if !v.is_empty() => v.iter().map(|s| age_range(s)).collect::<Vec<_>>().join(", "),
            _ => UNSPECIFIED.to_string(),
        },
        "annotator_trans" => {
            let v = match persona.values(Gender) {
                None => UNSPECIFIED,
                Some(g) if g.iter().any(|s| s.starts_with("transgender")) => "yes",
                Some(_) => "no",
            };
            format!("annotator_transgender: {v}")
        }
        "annotator_sexuality" => line(persona, Sexuality),
        "annotator_race" => line(persona, Race),
        "annotator_religion" => line(persona, Religion),
        "annotator_random_feature" => random_feature(persona, post_text, seed),
        "target_list" => targets.join(", "),
        "comment_text" => post_text.to_string(),
        _ => return None,
    })
}

fn render_body(body: &str, persona: &PersonaProfile, post_text: &str, targets: &[String], seed: u64) -> Result<String> {
    if post_text.trim().is_empty() {
        return Err(Error::InvalidInput("cannot render a prompt for an empty post".into()));
    }
    let mut out = String::with_capacity(body.len() + post_text.len());
    let mut missing = None;
    for_each_token(body, |tok| match tok {
        Token::Text(t) => out.push_str(t),
        Token::Placeholder(name) => match resolve(name, persona, post_text, targets, seed) {
            Some(v) => out.push_str(&v),
            None => {
                missing.get_or_insert(name.to_string());
            }
        },
    });
    match missing {
        Some(name) => Err(Error::InvalidInput(format!("unresolved placeholder `{{{name}}}`"))),
        None => Ok(out),
    }
}

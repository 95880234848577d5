use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnnotationRecord, AttributeKey, PackedRecord, Side, KEY_COUNT};
use crate::error::{Error, Result};

const DEFAULT_VOCABULARY: &str = include_str!("../../config/vocabulary.toml");
const STANDARD_EXCLUSIONS: &str = include_str!("../../config/exclusions/standard.toml");
const GRAY_ROW_EXCLUSIONS: &str = include_str!("../../config/exclusions/gray_rows.toml");

/// A `(side, key, value)` triple left out of every analysis.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Exclusion {
    pub side: Side,
    pub key: AttributeKey,
    pub value: String,
}

impl Exclusion {
    pub fn new(side: Side, key: AttributeKey, value: impl Into<String>) -> Self {
        Exclusion {
            side,
            key,
            value: value.into(),
        }
    }
}

/// Allowed values per attribute plus the exclusion list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSchema {
    values: [Vec<String>; KEY_COUNT],
    exclusions: BTreeSet<Exclusion>,
}

#[derive(Deserialize, Serialize)]
struct VocabularyFile {
    values: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize, Default)]
struct ExclusionFile {
    #[serde(default)]
    annotator: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    target: BTreeMap<String, Vec<String>>,
}

impl AttributeSchema {
    pub fn new(
        vocabulary: BTreeMap<AttributeKey, Vec<String>>,
        exclusions: impl IntoIterator<Item = Exclusion>,
    ) -> Result<Self> {
        let mut values: [Vec<String>; KEY_COUNT] = Default::default();
        for (key, vals) in vocabulary {
            if vals.len() > 64 {
                return Err(Error::Schema(format!(
                    "attribute `{key}` has {} values; at most 64 are supported",
                    vals.len()
                )));
            }
            let unique: BTreeSet<&String> = vals.iter().collect();
            if unique.len() != vals.len() {
                return Err(Error::Schema(format!("attribute `{key}` lists a value twice")));
            }
            if let Some(bad) = vals.iter().find(|v| v.is_empty() || v.contains('|')) {
                return Err(Error::Schema(format!(
                    "attribute `{key}` value `{bad}` is empty or contains `|`"
                )));
            }
            values[key.index()] = vals;
        }
        let schema = AttributeSchema {
            values,
            exclusions: BTreeSet::new(),
        };
        let mut exclusions_set = BTreeSet::new();
        for ex in exclusions {
            if !ex.key.applies_to(ex.side) {
                return Err(Error::Schema(format!(
                    "exclusion {}:{}={} names an attribute that does not exist on that side",
                    ex.side, ex.key, ex.value
                )));
            }
            if schema.value_index(ex.key, &ex.value).is_none() {
                return Err(Error::Schema(format!(
                    "exclusion {}:{}={} references a value outside the vocabulary",
                    ex.side, ex.key, ex.value
                )));
            }
            exclusions_set.insert(ex);
        }
        Ok(AttributeSchema {
            exclusions: exclusions_set,
            ..schema
        })
    }

    pub fn from_toml_str(vocabulary: &str, exclusions: &str) -> Result<Self> {
        let vocab: VocabularyFile = toml::from_str(vocabulary).map_err(|e| Error::Config {
            path: "<vocabulary>".into(),
            message: e.to_string(),
        })?;
        let excl: ExclusionFile = toml::from_str(exclusions).map_err(|e| Error::Config {
            path: "<exclusions>".into(),
            message: e.to_string(),
        })?;

        let mut vocabulary = BTreeMap::new();
        for (name, vals) in vocab.values {
            vocabulary.insert(name.parse::<AttributeKey>()?, vals);
        }
        let mut list = Vec::new();
        for (side, map) in [(Side::Annotator, excl.annotator), (Side::Target, excl.target)] {
            for (name, vals) in map {
                let key: AttributeKey = name.parse()?;
                list.extend(vals.into_iter().map(|v| Exclusion::new(side, key, v)));
            }
        }
        AttributeSchema::new(vocabulary, list)
    }

    pub fn load(vocabulary: &Path, exclusions: Option<&Path>) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let vocab = read(vocabulary)?;
        let excl = match exclusions {
            Some(p) => read(p)?,
            None => String::new(),
        };
        AttributeSchema::from_toml_str(&vocab, &excl).map_err(|e| match e {
            Error::Config { message, path } => Error::Config {
                path: if path == "<vocabulary>" {
                    vocabulary.display().to_string()
                } else {
                    exclusions.map(|p| p.display().to_string()).unwrap_or(path)
                },
                message,
            },
            other => other,
        })
    }

    /// Shipped vocabulary with the default exclusions (all `other` values,
    /// `extremely liberal` annotators, `nothing` as a target religion).
    pub fn mhs_default() -> Self {
        AttributeSchema::from_toml_str(DEFAULT_VOCABULARY, STANDARD_EXCLUSIONS)
            .expect("shipped schema is valid")
    }

    /// Shipped vocabulary excluding every grey-marked inventory row.
    pub fn mhs_gray_rows() -> Self {
        AttributeSchema::from_toml_str(DEFAULT_VOCABULARY, GRAY_ROW_EXCLUSIONS)
            .expect("shipped schema is valid")
    }

    /// Shipped vocabulary with the given exclusion file contents.
    pub fn mhs_with_exclusions(exclusions: &str) -> Result<Self> {
        AttributeSchema::from_toml_str(DEFAULT_VOCABULARY, exclusions)
    }

    /// Vocabulary in the format read by [`AttributeSchema::load`]; keys with no values are left out.
    pub fn vocabulary_toml(&self) -> String {
        let values = self
            .vocabulary()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.name().to_string(), v))
            .collect();
        toml::to_string(&VocabularyFile { values }).expect("vocabulary serialises")
    }

    pub fn allowed_values(&self, key: AttributeKey) -> &[String] {
        &self.values[key.index()]
    }

    pub fn vocabulary(&self) -> BTreeMap<AttributeKey, Vec<String>> {
        AttributeKey::ALL
            .into_iter()
            .filter(|k| !self.values[k.index()].is_empty())
            .map(|k| (k, self.values[k.index()].clone()))
            .collect()
    }

    pub fn value_index(&self, key: AttributeKey, value: &str) -> Option<usize> {
        self.values[key.index()].iter().position(|v| v == value)
    }

    pub fn is_excluded(&self, side: Side, key: AttributeKey, value: &str) -> bool {
        self.exclusions.contains(&Exclusion::new(side, key, value))
    }

    pub fn exclusions(&self) -> impl Iterator<Item = &Exclusion> {
        self.exclusions.iter()
    }

    /// Stable hash of vocabulary and exclusions.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for key in AttributeKey::ALL {
            h.update(key.name());
            for v in self.allowed_values(key) {
                h.update([0u8]);
                h.update(v);
            }
            h.update([1u8]);
        }
        for ex in &self.exclusions {
            h.update(format!("{}\u{0}{}\u{0}{}\u{1}", ex.side, ex.key, ex.value));
        }
        hex::encode(&h.finalize()[..16])
    }

    /// Sort a value set into vocabulary order.
    pub fn ordered<'a>(&self, key: AttributeKey, set: &'a BTreeSet<String>) -> Vec<&'a str> {
        let mut v: Vec<&str> = set.iter().map(String::as_str).collect();
        v.sort_by_key(|s| self.value_index(key, s).unwrap_or(usize::MAX));
        v
    }

    pub(crate) fn validate_record(&self, rec: &AnnotationRecord) -> Result<()> {
        for side in [Side::Annotator, Side::Target] {
            for (key, vals) in rec.attrs(side) {
                if !key.applies_to(side) {
                    return Err(Error::Schema(format!(
                        "record `{}`: attribute `{key}` is not recorded for {side}s",
                        rec.record_id
                    )));
                }
                if let Some(bad) = vals.iter().find(|v| self.value_index(*key, v).is_none()) {
                    return Err(Error::Schema(format!(
                        "record `{}`: unknown {side} {key} value `{bad}`",
                        rec.record_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn pack(&self, rec: &AnnotationRecord) -> PackedRecord {
        let mut ann = [0u64; KEY_COUNT];
        let mut tgt = [0u64; KEY_COUNT];
        for (side, out) in [(Side::Annotator, &mut ann), (Side::Target, &mut tgt)] {
            for (key, vals) in rec.attrs(side) {
                for v in vals {
                    if let Some(i) = self.value_index(*key, v) {
                        out[key.index()] |= 1 << i;
                    }
                }
            }
        }
        PackedRecord {
            label: rec.label.ordinal(),
            ann,
            tgt,
        }
    }
}

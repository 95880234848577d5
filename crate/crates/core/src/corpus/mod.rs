//! Attribute-rich annotation corpora.
//!
//! A [`Corpus`] is an immutable, validated list of [`AnnotationRecord`]s plus the
//! [`AttributeSchema`] they were checked against. Attribute values are sets: an
//! annotator may report several races, a post may target several groups, and an
//! empty set means the attribute is unknown for that record.

mod io;
mod mhs;
mod schema;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use io::{
    load_corpus, read_canonical_csv, read_canonical_jsonl, read_texts_csv, write_canonical_csv, write_canonical_jsonl,
    write_texts_csv, Format,
};
pub use mhs::{ColumnMapping, FieldMap, IngestOutput, MhsAdapter, Rule};
pub use schema::{AttributeSchema, Exclusion};

use crate::error::{Error, Result};
use crate::pairing::GroupSelector;

/// Hate label assigned to a post. Ordinal: non-hate < maybe < hate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonHate,
    Maybe,
    Hate,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::NonHate, Label::Maybe, Label::Hate];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(rank: u8) -> Option<Label> {
        Label::ALL.get(rank as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonHate => "non_hate",
            Label::Maybe => "maybe",
            Label::Hate => "hate",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "non_hate" => Ok(Label::NonHate),
            "maybe" => Ok(Label::Maybe),
            "hate" => Ok(Label::Hate),
            other => Err(Error::LabelOutOfRange(format!("unknown label `{other}`"))),
        }
    }
}

/// Which population an attribute describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Annotator,
    Target,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Annotator => "annotator",
            Side::Target => "target",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annotator" => Ok(Side::Annotator),
            "target" => Ok(Side::Target),
            other => Err(Error::InvalidInput(format!("unknown side `{other}`"))),
        }
    }
}

/// The ten socio-demographic attributes. Declaration order is the canonical
/// enumeration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKey {
    Age,
    Disability,
    Education,
    Ideology,
    Gender,
    Income,
    Origin,
    Race,
    Religion,
    Sexuality,
}

pub(crate) const KEY_COUNT: usize = 10;

impl AttributeKey {
    pub const ALL: [AttributeKey; KEY_COUNT] = [
        AttributeKey::Age,
        AttributeKey::Disability,
        AttributeKey::Education,
        AttributeKey::Ideology,
        AttributeKey::Gender,
        AttributeKey::Income,
        AttributeKey::Origin,
        AttributeKey::Race,
        AttributeKey::Religion,
        AttributeKey::Sexuality,
    ];

    /// Attributes recorded for both annotators and targets.
    pub const SHARED: [AttributeKey; 5] = [
        AttributeKey::Age,
        AttributeKey::Gender,
        AttributeKey::Race,
        AttributeKey::Religion,
        AttributeKey::Sexuality,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AttributeKey::Age => "age",
            AttributeKey::Disability => "disability",
            AttributeKey::Education => "education",
            AttributeKey::Ideology => "ideology",
            AttributeKey::Gender => "gender",
            AttributeKey::Income => "income",
            AttributeKey::Origin => "origin",
            AttributeKey::Race => "race",
            AttributeKey::Religion => "religion",
            AttributeKey::Sexuality => "sexuality",
        }
    }

    pub fn annotator_side(self) -> bool {
        !matches!(self, AttributeKey::Disability | AttributeKey::Origin)
    }

    pub fn target_side(self) -> bool {
        !matches!(
            self,
            AttributeKey::Education | AttributeKey::Ideology | AttributeKey::Income
        )
    }

    pub fn applies_to(self, side: Side) -> bool {
        match side {
            Side::Annotator => self.annotator_side(),
            Side::Target => self.target_side(),
        }
    }

    pub fn for_side(side: Side) -> impl Iterator<Item = AttributeKey> {
        AttributeKey::ALL.into_iter().filter(move |k| k.applies_to(side))
    }
}

impl fmt::Display for AttributeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttributeKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttributeKey::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown attribute `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Llm,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Human => "human",
            Source::Llm => "llm",
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "human" => Ok(Source::Human),
            "llm" => Ok(Source::Llm),
            other => Err(Error::InvalidInput(format!("unknown source `{other}`"))),
        }
    }
}

/// Attribute values keyed by attribute. A missing key and an empty set both
/// mean "unknown"; constructors normalise to the former.
pub type AttrMap = BTreeMap<AttributeKey, BTreeSet<String>>;

/// One label on one post.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: String,
    pub post_id: String,
    #[serde(default)]
    pub text_fingerprint: String,
    pub annotator_id: String,
    pub label: Label,
    #[serde(default)]
    pub annotator_attrs: AttrMap,
    #[serde(default)]
    pub target_attrs: AttrMap,
    pub source: Source,
}

impl AnnotationRecord {
    pub fn attrs(&self, side: Side) -> &AttrMap {
        match side {
            Side::Annotator => &self.annotator_attrs,
            Side::Target => &self.target_attrs,
        }
    }

    pub fn values(&self, side: Side, key: AttributeKey) -> Option<&BTreeSet<String>> {
        self.attrs(side).get(&key).filter(|s| !s.is_empty())
    }

    fn normalise(&mut self) {
        self.annotator_attrs.retain(|_, v| !v.is_empty());
        self.target_attrs.retain(|_, v| !v.is_empty());
    }
}

/// Hex SHA-256 of a post's text, truncated to 128 bits.
pub fn text_fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..16])
}

/// Label and attribute bitmasks for fast group membership tests.
#[derive(Clone, Debug)]
pub(crate) struct PackedRecord {
    pub label: u8,
    pub ann: [u64; KEY_COUNT],
    pub tgt: [u64; KEY_COUNT],
}

impl PackedRecord {
    pub fn mask(&self, side: Side, key: AttributeKey) -> u64 {
        match side {
            Side::Annotator => self.ann[key.index()],
            Side::Target => self.tgt[key.index()],
        }
    }
}

/// A validated, immutable annotation corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<AnnotationRecord>,
    schema: Arc<AttributeSchema>,
    index: BTreeMap<String, Vec<usize>>,
    packed: Vec<PackedRecord>,
    posts: Vec<Vec<u32>>,
    content_hash: OnceLock<String>,
}

impl Corpus {
    pub fn new(records: Vec<AnnotationRecord>, schema: Arc<AttributeSchema>) -> Result<Self> {
        let mut records = records;
        let mut seen = BTreeSet::new();
        for rec in records.iter_mut() {
            rec.normalise();
            if !seen.insert(rec.record_id.as_str()) {
                return Err(Error::DuplicateRecord(rec.record_id.clone()));
            }
            schema.validate_record(rec)?;
        }

        let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut post_order: HashMap<&str, usize> = HashMap::new();
        let mut posts: Vec<Vec<u32>> = Vec::new();
        let mut packed = Vec::with_capacity(records.len());
        for (pos, rec) in records.iter().enumerate() {
            index.entry(rec.post_id.clone()).or_default().push(pos);
            let slot = *post_order.entry(rec.post_id.as_str()).or_insert_with(|| {
                posts.push(Vec::new());
                posts.len() - 1
            });
            posts[slot].push(pos as u32);
            packed.push(schema.pack(rec));
        }

        for (post, members) in &index {
            let mut prints = members
                .iter()
                .map(|&i| records[i].text_fingerprint.as_str())
                .filter(|f| !f.is_empty());
            if let Some(first) = prints.next() {
                if prints.any(|f| f != first) {
                    return Err(Error::Schema(format!(
                        "post `{post}` has records with different text fingerprints"
                    )));
                }
            }
        }

        Ok(Corpus {
            records,
            schema,
            index,
            packed,
            posts,
            content_hash: OnceLock::new(),
        })
    }

    pub fn empty(schema: Arc<AttributeSchema>) -> Self {
        Corpus::new(Vec::new(), schema).expect("empty corpus is valid")
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<AttributeSchema> {
        Arc::clone(&self.schema)
    }

    /// Record positions for each post id.
    pub fn index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.index
    }

    pub fn post_records(&self, post_id: &str) -> &[usize] {
        self.index.get(post_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn packed(&self) -> &[PackedRecord] {
        &self.packed
    }

    /// Record positions grouped by post, posts in first-appearance order.
    pub(crate) fn post_groups(&self) -> &[Vec<u32>] {
        &self.posts
    }

    /// SHA-256 over the canonical CSV serialisation.
    pub fn content_hash(&self) -> &str {
        self.content_hash.get_or_init(|| {
            let mut buf = Vec::new();
            write_canonical_csv(self, &mut buf).expect("in-memory write cannot fail");
            hex::encode(Sha256::digest(&buf))
        })
    }

    /// Copy of this corpus with labels replaced, marked as LLM output.
    pub fn with_labels(&self, labels: &BTreeMap<String, Label>) -> Result<Corpus> {
        let records = self
            .records
            .iter()
            .filter_map(|r| {
                labels.get(&r.record_id).map(|&label| AnnotationRecord {
                    label,
                    source: Source::Llm,
                    ..r.clone()
                })
            })
            .collect();
        Corpus::new(records, self.schema_arc())
    }
}

/// Every non-excluded selector for one side, in key then value order.
pub fn enumerate_selectors(schema: &AttributeSchema, side: Side) -> Vec<GroupSelector> {
    AttributeKey::for_side(side)
        .flat_map(|key| {
            schema
                .allowed_values(key)
                .iter()
                .filter(move |v| !schema.is_excluded(side, key, v))
                .map(move |v| GroupSelector::new(side, key, v.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSize {
    pub side: Side,
    pub key: AttributeKey,
    pub value: String,
    /// Distinct annotators (annotator side) or records (target side).
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub records: usize,
    pub annotators: usize,
    pub posts: usize,
    pub label_counts: [usize; 3],
    /// Rounded to one decimal.
    pub mean_labels_per_post: f64,
    /// Rounded to one decimal.
    pub mean_posts_per_annotator: f64,
    pub group_sizes: Vec<GroupSize>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let records = corpus.records();
    let mut annotator_posts: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    let mut label_counts = [0usize; 3];
    for r in records {
        annotator_posts
            .entry(r.annotator_id.as_str())
            .or_default()
            .insert(r.post_id.as_str());
        label_counts[r.label.ordinal() as usize] += 1;
    }
    let annotators = annotator_posts.len();
    let posts = corpus.index().len();

    let mean_labels_per_post = if posts == 0 {
        0.0
    } else {
        round1(records.len() as f64 / posts as f64)
    };
    let mean_posts_per_annotator = if annotators == 0 {
        0.0
    } else {
        let total: usize = annotator_posts.values().map(BTreeSet::len).sum();
        round1(total as f64 / annotators as f64)
    };

    let schema = corpus.schema();
    let mut group_sizes = Vec::new();
    for side in [Side::Annotator, Side::Target] {
        for sel in enumerate_selectors(schema, side) {
            let count = match side {
                Side::Annotator => records
                    .iter()
                    .filter(|r| sel.matches(r))
                    .map(|r| r.annotator_id.as_str())
                    .collect::<BTreeSet<_>>()
                    .len(),
                Side::Target => records.iter().filter(|r| sel.matches(r)).count(),
            };
            group_sizes.push(GroupSize {
                side,
                key: sel.key,
                value: sel.value.clone(),
                count,
            });
        }
    }

    CorpusStats {
        records: records.len(),
        annotators,
        posts,
        label_counts,
        mean_labels_per_post,
        mean_posts_per_annotator,
        group_sizes,
    }
}

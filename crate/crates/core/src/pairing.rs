//! Group selection and the cross-group confusion matrix.
//!
//! For an annotator selector `t = v` and an optional target selector
//! `t' = v'`, every annotation `c` whose annotator has `v` in its `t` set and
//! whose targets match `t' = v'` is paired with every other annotation of the
//! same post whose annotator has a non-empty `t` set without `v`. Cell
//! `(label(c), label(other))` counts those ordered pairs. Annotations with an
//! unknown `t` never take part on either side.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AnnotationRecord, AttributeKey, Corpus, Label, PackedRecord, Side};
use crate::error::{Error, Result};

/// `side:key = value`, or `side:key != value` when negated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupSelector {
    pub side: Side,
    pub key: AttributeKey,
    pub value: String,
    #[serde(default)]
    pub negated: bool,
}

impl GroupSelector {
    pub fn new(side: Side, key: AttributeKey, value: impl Into<String>) -> Self {
        GroupSelector {
            side,
            key,
            value: value.into(),
            negated: false,
        }
    }

    pub fn annotator(key: AttributeKey, value: impl Into<String>) -> Self {
        GroupSelector::new(Side::Annotator, key, value)
    }

    pub fn target(key: AttributeKey, value: impl Into<String>) -> Self {
        GroupSelector::new(Side::Target, key, value)
    }

    pub fn negate(mut self) -> Self {
        self.negated = !self.negated;
        self
    }

    /// Set-based membership. Negated selectors only match records whose set
    /// for the key is non-empty.
    pub fn matches(&self, rec: &AnnotationRecord) -> bool {
        match rec.values(self.side, self.key) {
            None => false,
            Some(set) => set.contains(&self.value) != self.negated,
        }
    }

    fn resolve(&self, corpus: &Corpus) -> Result<Resolved> {
        if !self.key.applies_to(self.side) {
            return Err(Error::Selector(format!("{self}: attribute not recorded for {}s", self.side)));
        }
        let i = corpus
            .schema()
            .value_index(self.key, &self.value)
            .ok_or_else(|| Error::Selector(format!("{self}: value outside the vocabulary")))?;
        Ok(Resolved {
            side: self.side,
            key: self.key,
            bit: 1 << i,
            negated: self.negated,
        })
    }
}

impl fmt::Display for GroupSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.negated { "!=" } else { "=" };
        write!(f, "{}:{}{}{}", self.side, self.key, op, self.value)
    }
}

#[derive(Clone, Copy)]
struct Resolved {
    side: Side,
    key: AttributeKey,
    bit: u64,
    negated: bool,
}

impl Resolved {
    #[inline]
    fn matches(&self, rec: &PackedRecord) -> bool {
        let mask = rec.mask(self.side, self.key);
        mask != 0 && ((mask & self.bit != 0) != self.negated)
    }
}

/// 3×3 label-pair counts. Rows: in-group label; columns: out-group label;
/// both ordered non-hate, maybe, hate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn n_pairs(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, row: Label, col: Label) -> u64 {
        self.counts[row.ordinal() as usize][col.ordinal() as usize]
    }

    /// In-group label more hateful than out-group label.
    pub fn lower(&self) -> u64 {
        let c = &self.counts;
        c[1][0] + c[2][0] + c[2][1]
    }

    /// In-group label less hateful than out-group label.
    pub fn upper(&self) -> u64 {
        let c = &self.counts;
        c[0][1] + c[0][2] + c[1][2]
    }

    pub fn diagonal(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; 3] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn col_sums(&self) -> [u64; 3] {
        let mut out = [0; 3];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = [[0; 3]; 3];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                t[j][i] = c;
            }
        }
        ConfusionMatrix { counts: t }
    }

    pub fn scaled(&self, k: u64) -> Self {
        ConfusionMatrix {
            counts: self.counts.map(|r| r.map(|c| c * k)),
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, x) in r.iter_mut().zip(o) {
                *c += x;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: [String; 3],
    counts: [[u64; 3]; 3],
    n_pairs: u64,
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson {
            rows: Label::ALL.map(|l| l.as_str().to_string()),
            counts: self.counts,
            n_pairs: self.n_pairs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = MatrixJson::deserialize(d)?;
        if j.rows != Label::ALL.map(|l| l.as_str().to_string()) {
            return Err(D::Error::custom("matrix rows must be [non_hate, maybe, hate]"));
        }
        let m = ConfusionMatrix { counts: j.counts };
        if m.n_pairs() != j.n_pairs {
            return Err(D::Error::custom("n_pairs does not equal the sum of counts"));
        }
        Ok(m)
    }
}

fn check_sides(ann_sel: &GroupSelector, tgt_sel: Option<&GroupSelector>) -> Result<()> {
    if ann_sel.side != Side::Annotator {
        return Err(Error::Selector(format!("{ann_sel} is not an annotator selector")));
    }
    if let Some(t) = tgt_sel {
        if t.side != Side::Target {
            return Err(Error::Selector(format!("{t} is not a target selector")));
        }
    }
    Ok(())
}

/// Ids of records whose annotator matches `ann_sel` and, if given, whose
/// targets match `tgt_sel`, in corpus order.
pub fn select_annotations<'c>(
    corpus: &'c Corpus,
    ann_sel: &GroupSelector,
    tgt_sel: Option<&GroupSelector>,
) -> Result<Vec<&'c str>> {
    check_sides(ann_sel, tgt_sel)?;
    let ann = ann_sel.resolve(corpus)?;
    let tgt = tgt_sel.map(|t| t.resolve(corpus)).transpose()?;
    Ok(corpus
        .packed()
        .iter()
        .zip(corpus.records())
        .filter(|(p, _)| ann.matches(p) && tgt.is_none_or(|t| t.matches(p)))
        .map(|(_, r)| r.record_id.as_str())
        .collect())
}

/// Pair counts between an in-group predicate (with optional target filter on
/// the in-group record) and an out-group predicate, over records sharing a post.
fn cross_matrix(corpus: &Corpus, inside: Resolved, outside: Resolved, tgt: Option<Resolved>) -> ConfusionMatrix {
    let packed = corpus.packed();
    let mut m = ConfusionMatrix::default();
    for post in corpus.post_groups() {
        let mut h_in = [0u64; 3];
        let mut h_out = [0u64; 3];
        for &i in post {
            let r = &packed[i as usize];
            if inside.matches(r) && tgt.is_none_or(|t| t.matches(r)) {
                h_in[r.label as usize] += 1;
            }
            if outside.matches(r) {
                h_out[r.label as usize] += 1;
            }
        }
        if h_in == [0; 3] || h_out == [0; 3] {
            continue;
        }
        for (row, &a) in m.counts.iter_mut().zip(&h_in) {
            for (cell, &b) in row.iter_mut().zip(&h_out) {
                *cell += a * b;
            }
        }
    }
    m
}

/// Cross-group confusion matrix for `ann_sel` (which must not be negated).
pub fn build_matrix(
    corpus: &Corpus,
    ann_sel: &GroupSelector,
    tgt_sel: Option<&GroupSelector>,
) -> Result<ConfusionMatrix> {
    check_sides(ann_sel, tgt_sel)?;
    if ann_sel.negated {
        return Err(Error::Selector(format!("{ann_sel}: in-group selector must not be negated")));
    }
    let inside = ann_sel.resolve(corpus)?;
    let outside = ann_sel.clone().negate().resolve(corpus)?;
    let tgt = tgt_sel.map(|t| t.resolve(corpus)).transpose()?;
    Ok(cross_matrix(corpus, inside, outside, tgt))
}

/// Same pairs as [`build_matrix`] but counted from the out-group's side.
/// Only meaningful without a target filter.
pub fn build_matrix_from_outgroup(corpus: &Corpus, ann_sel: &GroupSelector) -> Result<ConfusionMatrix> {
    check_sides(ann_sel, None)?;
    let inside = ann_sel.resolve(corpus)?;
    let outside = ann_sel.clone().negate().resolve(corpus)?;
    Ok(cross_matrix(corpus, outside, inside, None))
}

/// Ordinal label samples behind a matrix: `X` holds the in-group label of
/// every counted pair, `Y` the out-group label.
pub fn paired_samples(
    corpus: &Corpus,
    ann_sel: &GroupSelector,
    tgt_sel: Option<&GroupSelector>,
) -> Result<(Vec<u8>, Vec<u8>)> {
    Ok(samples_from_matrix(&build_matrix(corpus, ann_sel, tgt_sel)?))
}

pub fn samples_from_matrix(m: &ConfusionMatrix) -> (Vec<u8>, Vec<u8>) {
    let n = m.n_pairs() as usize;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for (i, row) in m.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            xs.extend(std::iter::repeat_n(i as u8, c as usize));
            ys.extend(std::iter::repeat_n(j as u8, c as usize));
        }
    }
    (xs, ys)
}

/// Memoises matrices per `(corpus hash, annotator selector, target selector)`,
/// optionally persisted as one JSON file per key.
#[derive(Default)]
pub struct MatrixCache {
    memory: Mutex<HashMap<String, ConfusionMatrix>>,
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl MatrixCache {
    pub fn new() -> Self {
        MatrixCache::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(MatrixCache {
            dir: Some(dir),
            ..MatrixCache::default()
        })
    }

    fn key(corpus: &Corpus, ann: &GroupSelector, tgt: Option<&GroupSelector>) -> String {
        let tgt = tgt.map(ToString::to_string).unwrap_or_default();
        format!("{}\u{0}{ann}\u{0}{tgt}", corpus.content_hash())
    }

    fn file_for(dir: &Path, key: &str) -> PathBuf {
        let h = hex::encode(&Sha256::digest(key.as_bytes())[..16]);
        dir.join(format!("{h}.json"))
    }

    pub fn get_or_build(
        &self,
        corpus: &Corpus,
        ann: &GroupSelector,
        tgt: Option<&GroupSelector>,
    ) -> Result<ConfusionMatrix> {
        let key = Self::key(corpus, ann, tgt);
        if let Some(m) = self.memory.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(*m);
        }
        if let Some(dir) = &self.dir {
            let path = Self::file_for(dir, &key);
            if let Ok(bytes) = std::fs::read(&path) {
                let m: ConfusionMatrix = serde_json::from_slice(&bytes).map_err(|e| Error::Cache {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                self.hits.fetch_add(1, Ordering::Relaxed);
                self.memory.lock().expect("cache lock").insert(key, m);
                return Ok(m);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let m = build_matrix(corpus, ann, tgt)?;
        if let Some(dir) = &self.dir {
            let path = Self::file_for(dir, &key);
            let body = serde_json::to_vec(&m).expect("matrix serialises");
            crate::util::write_atomic(&path, &body)?;
        }
        self.memory.lock().expect("cache lock").insert(key, m);
        Ok(m)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use super::*;
    use crate::corpus::{AttrMap, AttributeSchema, Source};

    fn rec(id: &str, post: &str, gender: &[&str], target_race: &[&str], label: Label) -> AnnotationRecord {
        let mut annotator_attrs = AttrMap::new();
        if !gender.is_empty() {
            annotator_attrs.insert(AttributeKey::Gender, gender.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>());
        }
        let mut target_attrs = AttrMap::new();
        if !target_race.is_empty() {
            target_attrs.insert(AttributeKey::Race, target_race.iter().map(|s| s.to_string()).collect());
        }
        AnnotationRecord {
            record_id: id.into(),
            post_id: post.into(),
            text_fingerprint: String::new(),
            annotator_id: format!("a{id}"),
            label,
            annotator_attrs,
            target_attrs,
            source: Source::Human,
        }
    }

    fn corpus(records: Vec<AnnotationRecord>) -> Corpus {
        Corpus::new(records, Arc::new(AttributeSchema::mhs_default())).unwrap()
    }

    fn women() -> GroupSelector {
        GroupSelector::annotator(AttributeKey::Gender, "women")
    }

    #[test]
    fn no_women_annotators_selects_nothing() {
        let c = corpus(vec![rec("1", "p", &["men"], &[], Label::Hate)]);
        assert!(select_annotations(&c, &women(), None).unwrap().is_empty());
    }

    #[test]
    fn negated_selector_is_complement_among_known() {
        let c = corpus(vec![
            rec("1", "p", &["men"], &[], Label::Hate),
            rec("2", "p", &["women"], &[], Label::Hate),
            rec("3", "p", &[], &[], Label::Hate),
            rec("4", "p", &["women", "men"], &[], Label::Hate),
        ]);
        assert_eq!(select_annotations(&c, &women().negate(), None).unwrap(), ["1"]);
        assert_eq!(select_annotations(&c, &women(), None).unwrap(), ["2", "4"]);
    }

    #[test]
    fn side_mismatch_is_an_error() {
        let c = corpus(vec![]);
        let t = GroupSelector::target(AttributeKey::Race, "black");
        assert!(select_annotations(&c, &t, None).is_err());
        assert!(build_matrix(&c, &women(), Some(&women())).is_err());
        assert!(build_matrix(&c, &women().negate(), None).is_err());
    }

    #[test]
    fn in_group_only_post_gives_zero_matrix() {
        let c = corpus(vec![
            rec("1", "p", &["women"], &[], Label::Hate),
            rec("2", "p", &["women"], &[], Label::NonHate),
        ]);
        let m = build_matrix(&c, &women(), None).unwrap();
        assert_eq!(m, ConfusionMatrix::default());
        assert_eq!(m.n_pairs(), 0);
    }

    #[test]
    fn hand_traced_post() {
        let c = corpus(vec![
            rec("1", "p", &["women"], &["black"], Label::Hate),
            rec("2", "p", &["men"], &["black"], Label::NonHate),
            rec("3", "p", &["men"], &[], Label::Maybe),
        ]);
        let tgt = GroupSelector::target(AttributeKey::Race, "black");
        let m = build_matrix(&c, &women(), Some(&tgt)).unwrap();
        let mut expected = [[0; 3]; 3];
        expected[2][0] = 1;
        expected[2][1] = 1;
        assert_eq!(m.counts, expected);
        assert_eq!(m.n_pairs(), 2);

        let (x, y) = paired_samples(&c, &women(), Some(&tgt)).unwrap();
        assert_eq!(x, [2, 2]);
        assert_eq!(y, [0, 1]);
    }

    #[test]
    fn target_filter_applies_to_the_in_group_record() {
        let c = corpus(vec![
            rec("1", "p", &["women"], &["white"], Label::Hate),
            rec("2", "p", &["men"], &["black"], Label::NonHate),
        ]);
        let tgt = GroupSelector::target(AttributeKey::Race, "black");
        assert_eq!(build_matrix(&c, &women(), Some(&tgt)).unwrap().n_pairs(), 0);
    }

    #[test]
    fn zero_matrix_gives_empty_samples() {
        let (x, y) = samples_from_matrix(&ConfusionMatrix::default());
        assert!(x.is_empty() && y.is_empty());
    }

    #[test]
    fn outgroup_perspective_transposes() {
        let c = corpus(vec![
            rec("1", "p", &["women"], &[], Label::Hate),
            rec("2", "p", &["men"], &[], Label::NonHate),
            rec("3", "p", &["men"], &[], Label::Maybe),
            rec("4", "q", &["women"], &[], Label::Maybe),
            rec("5", "q", &["non binary"], &[], Label::Hate),
        ]);
        let m = build_matrix(&c, &women(), None).unwrap();
        let t = build_matrix_from_outgroup(&c, &women()).unwrap();
        assert_eq!(t, m.transpose());
    }

    #[test]
    fn matrix_json_layout() {
        let m = ConfusionMatrix::new([[1, 2, 3], [4, 5, 6], [7, 8, 9]]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(
            s,
            r#"{"rows":["non_hate","maybe","hate"],"counts":[[1,2,3],[4,5,6],[7,8,9]],"n_pairs":45}"#
        );
        assert_eq!(serde_json::from_str::<ConfusionMatrix>(&s).unwrap(), m);
        let bad = s.replace("45", "44");
        assert!(serde_json::from_str::<ConfusionMatrix>(&bad).is_err());
    }

    #[test]
    fn cache_reuses_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(vec![
            rec("1", "p", &["women"], &[], Label::Hate),
            rec("2", "p", &["men"], &[], Label::NonHate),
        ]);
        let cache = MatrixCache::with_dir(dir.path()).unwrap();
        let a = cache.get_or_build(&c, &women(), None).unwrap();
        let b = cache.get_or_build(&c, &women(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));

        let fresh = MatrixCache::with_dir(dir.path()).unwrap();
        assert_eq!(fresh.get_or_build(&c, &women(), None).unwrap(), a);
        assert_eq!((fresh.hits(), fresh.misses()), (1, 0));
    }
}

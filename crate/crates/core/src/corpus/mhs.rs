//! Adapter from the public Measuring Hate Speech release (one row per
//! annotation, multi-hot attribute columns) to canonical records.
//!
//! Column semantics live in a TOML mapping file; see
//! `config/mhs_columns.toml` for the shipped one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{text_fingerprint, AnnotationRecord, AttrMap, AttributeKey, AttributeSchema, Corpus, Label, Side, Source};
use crate::error::{Error, Result};

const DEFAULT_MAPPING: &str = include_str!("../../config/mhs_columns.toml");

pub type FieldMap = HashMap<String, String>;

#[derive(Clone, Debug, Deserialize)]
pub struct Bin {
    /// Exclusive upper bound; the last bin may omit it.
    pub below: Option<f64>,
    pub value: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    /// Sets `value` when every `all` column is truthy and no `none` column is.
    Indicator {
        side: Side,
        key: AttributeKey,
        value: String,
        all: Vec<String>,
        #[serde(default)]
        none: Vec<String>,
    },
    /// Maps the raw cell of `column` through `map`; unmapped cells are ignored.
    Categorical {
        side: Side,
        key: AttributeKey,
        column: String,
        map: BTreeMap<String, String>,
    },
    /// Buckets a numeric column.
    Bins {
        side: Side,
        key: AttributeKey,
        column: String,
        bins: Vec<Bin>,
    },
}

impl Rule {
    fn target(&self) -> (Side, AttributeKey) {
        match self {
            Rule::Indicator { side, key, .. }
            | Rule::Categorical { side, key, .. }
            | Rule::Bins { side, key, .. } => (*side, *key),
        }
    }

    fn produced_values(&self) -> Vec<&str> {
        match self {
            Rule::Indicator { value, .. } => vec![value.as_str()],
            Rule::Categorical { map, .. } => map.values().map(String::as_str).collect(),
            Rule::Bins { bins, .. } => bins.iter().map(|b| b.value.as_str()).collect(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct ColumnMapping {
    pub post_id_column: String,
    pub annotator_id_column: String,
    pub label_column: String,
    #[serde(default)]
    pub text_column: Option<String>,
    #[serde(default, rename = "rule")]
    pub rules: Vec<Rule>,
}

impl ColumnMapping {
    pub fn mhs_default() -> Self {
        ColumnMapping::from_toml_str(DEFAULT_MAPPING).expect("shipped mapping is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config {
            path: "<column mapping>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&s).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Keys that describe a single choice per annotator; more than one value is
/// kept but logged.
const SINGLE_VALUED: [AttributeKey; 4] = [
    AttributeKey::Age,
    AttributeKey::Education,
    AttributeKey::Income,
    AttributeKey::Ideology,
];

fn truthy(cell: &str, column: &str) -> Result<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "1.0" | "true" | "t" | "yes" | "y" => Ok(true),
        "" | "0" | "0.0" | "false" | "f" | "no" | "n" | "nan" | "none" | "null" => Ok(false),
        other => Err(Error::InvalidInput(format!(
            "column `{column}`: `{other}` is not an indicator value"
        ))),
    }
}

pub(crate) fn parse_label(cell: &str) -> Result<Label> {
    let raw = cell.trim();
    let rank: f64 = raw
        .parse()
        .map_err(|_| Error::LabelOutOfRange(format!("`{raw}` is not a number")))?;
    if rank.fract() != 0.0 || !(0.0..=2.0).contains(&rank) {
        return Err(Error::LabelOutOfRange(format!("label out of range: {raw}")));
    }
    Ok(Label::from_ordinal(rank as u8).expect("checked range"))
}

pub struct MhsAdapter {
    mapping: ColumnMapping,
    schema: Arc<AttributeSchema>,
}

/// Canonical corpus plus the post texts needed for LLM prompting.
pub struct IngestOutput {
    pub corpus: Corpus,
    pub texts: BTreeMap<String, String>,
    pub rows: usize,
}

impl MhsAdapter {
    pub fn new(mapping: ColumnMapping, schema: Arc<AttributeSchema>) -> Result<Self> {
        for rule in &mapping.rules {
            let (side, key) = rule.target();
            if !key.applies_to(side) {
                return Err(Error::Config {
                    path: "<column mapping>".into(),
                    message: format!("rule maps to {side} {key}, which does not exist"),
                });
            }
            for v in rule.produced_values() {
                if schema.value_index(key, v).is_none() {
                    return Err(Error::Config {
                        path: "<column mapping>".into(),
                        message: format!("rule produces {key} value `{v}` outside the vocabulary"),
                    });
                }
            }
        }
        Ok(MhsAdapter { mapping, schema })
    }

    pub fn schema(&self) -> Arc<AttributeSchema> {
        Arc::clone(&self.schema)
    }

    /// Map one raw row. `record_id` defaults to `<post_id>:<annotator_id>`.
    pub fn adapt(&self, row: &FieldMap) -> Result<AnnotationRecord> {
        self.adapt_with(|c| row.get(c).map(String::as_str))
    }

    fn adapt_with<'a>(&self, get: impl Fn(&str) -> Option<&'a str>) -> Result<AnnotationRecord> {
        let m = &self.mapping;
        let required = |c: &str| {
            get(c)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::InvalidInput(format!("missing value in column `{c}`")))
        };
        let post_id = required(&m.post_id_column)?.to_string();
        let annotator_id = required(&m.annotator_id_column)?.to_string();
        let label = parse_label(required(&m.label_column)?)?;
        let text_fingerprint = m
            .text_column
            .as_deref()
            .and_then(&get)
            .filter(|t| !t.is_empty())
            .map(text_fingerprint)
            .unwrap_or_default();

        let mut annotator_attrs = AttrMap::new();
        let mut target_attrs = AttrMap::new();
        for rule in &m.rules {
            let (side, key) = rule.target();
            let produced: Vec<&str> = match rule {
                Rule::Indicator { value, all, none, .. } => {
                    let mut on = !all.is_empty();
                    for c in all {
                        on &= truthy(get(c).unwrap_or(""), c)?;
                    }
                    for c in none {
                        on &= !truthy(get(c).unwrap_or(""), c)?;
                    }
                    if on {
                        vec![value.as_str()]
                    } else {
                        vec![]
                    }
                }
                Rule::Categorical { column, map, .. } => {
                    let raw = get(column).unwrap_or("").trim();
                    match map.get(raw) {
                        Some(v) => vec![v.as_str()],
                        None => {
                            if !raw.is_empty() {
                                tracing::debug!(column = %column, value = %raw, "unmapped categorical value");
                            }
                            vec![]
                        }
                    }
                }
                Rule::Bins { column, bins, .. } => {
                    let raw = get(column).unwrap_or("").trim();
                    match raw.parse::<f64>() {
                        Ok(x) if x.is_finite() => bins
                            .iter()
                            .find(|b| b.below.is_none_or(|hi| x < hi))
                            .map(|b| vec![b.value.as_str()])
                            .unwrap_or_default(),
                        _ => vec![],
                    }
                }
            };
            if produced.is_empty() {
                continue;
            }
            let attrs = match side {
                Side::Annotator => &mut annotator_attrs,
                Side::Target => &mut target_attrs,
            };
            attrs
                .entry(key)
                .or_insert_with(BTreeSet::new)
                .extend(produced.into_iter().map(String::from));
        }

        for key in SINGLE_VALUED {
            if let Some(set) = annotator_attrs.get(&key) {
                if set.len() > 1 {
                    tracing::debug!(%post_id, %annotator_id, %key, values = ?set, "multiple values for a single-choice attribute");
                }
            }
        }

        Ok(AnnotationRecord {
            record_id: format!("{post_id}:{annotator_id}"),
            post_id,
            text_fingerprint,
            annotator_id,
            label,
            annotator_attrs,
            target_attrs,
            source: Source::Human,
        })
    }

    /// Convert a full CSV export. Repeated `(post, annotator)` pairs get
    /// `#2`, `#3`, ... suffixes on their record ids.
    pub fn ingest<R: Read>(&self, reader: R, source_name: &str) -> Result<IngestOutput> {
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
            .clone();
        let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
        for c in [
            &self.mapping.post_id_column,
            &self.mapping.annotator_id_column,
            &self.mapping.label_column,
        ] {
            if !index.contains_key(c.as_str()) {
                return Err(Error::parse(source_name, 1, format!("missing column `{c}`")));
            }
        }

        let mut records = Vec::new();
        let mut texts = BTreeMap::new();
        let mut id_counts: HashMap<String, usize> = HashMap::new();
        let mut rows = 0;
        for row in rdr.records() {
            let row = row.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::parse(source_name, line, e.to_string())
            })?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            rows += 1;
            let get = |c: &str| index.get(c).and_then(|&i| row.get(i));
            let mut rec = self
                .adapt_with(get)
                .map_err(|e| Error::parse(source_name, line, e.to_string()))?;
            let n = id_counts.entry(rec.record_id.clone()).or_insert(0);
            *n += 1;
            if *n > 1 {
                rec.record_id = format!("{}#{}", rec.record_id, n);
            }
            if let Some(text) = self.mapping.text_column.as_deref().and_then(get) {
                texts.entry(rec.post_id.clone()).or_insert_with(|| text.to_string());
            }
            records.push(rec);
        }
        let corpus = Corpus::new(records, self.schema())?;
        Ok(IngestOutput { corpus, texts, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{read_canonical_csv, write_canonical_csv};

    fn adapter() -> MhsAdapter {
        MhsAdapter::new(ColumnMapping::mhs_default(), Arc::new(AttributeSchema::mhs_default())).unwrap()
    }

    fn row(pairs: &[(&str, &str)]) -> FieldMap {
        let mut m: FieldMap = [("comment_id", "47777"), ("annotator_id", "10873"), ("text", "some text")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for (k, v) in pairs {
            m.insert(k.to_string(), v.to_string());
        }
        m
    }

    #[test]
    fn hate_with_men_annotator() {
        let r = adapter()
            .adapt(&row(&[("hatespeech", "2"), ("annotator_gender_men", "True")]))
            .unwrap();
        assert_eq!(r.label, Label::Hate);
        assert_eq!(
            r.annotator_attrs[&AttributeKey::Gender],
            BTreeSet::from(["men".to_string()])
        );
        assert_eq!(r.record_id, "47777:10873");
        assert_eq!(r.text_fingerprint, text_fingerprint("some text"));
    }

    #[test]
    fn two_race_indicators_give_two_values_and_survive_export() {
        let a = adapter();
        let r = a
            .adapt(&row(&[
                ("hatespeech", "1"),
                ("annotator_race_black", "True"),
                ("annotator_race_white", "1.0"),
            ]))
            .unwrap();
        assert_eq!(r.label, Label::Maybe);
        assert_eq!(r.annotator_attrs[&AttributeKey::Race].len(), 2);

        let corpus = Corpus::new(vec![r.clone()], a.schema()).unwrap();
        let mut buf = Vec::new();
        write_canonical_csv(&corpus, &mut buf).unwrap();
        let back = read_canonical_csv(buf.as_slice(), "t", a.schema()).unwrap();
        assert_eq!(back.records()[0], r);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let err = adapter().adapt(&row(&[("hatespeech", "5")])).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange(_)));
        assert!(err.to_string().contains("label out of range"));
    }

    #[test]
    fn float_encoded_labels_are_accepted() {
        assert_eq!(parse_label("0.0").unwrap(), Label::NonHate);
        assert!(parse_label("1.5").is_err());
        assert!(parse_label("-1").is_err());
    }

    #[test]
    fn unset_columns_yield_empty_sets() {
        let r = adapter().adapt(&row(&[("hatespeech", "0")])).unwrap();
        assert!(r.annotator_attrs.is_empty());
        assert!(r.target_attrs.is_empty());
    }

    #[test]
    fn transgender_annotators_get_specific_gender_values() {
        let a = adapter();
        let r = a
            .adapt(&row(&[
                ("hatespeech", "0"),
                ("annotator_gender_women", "True"),
                ("annotator_transgender", "True"),
            ]))
            .unwrap();
        assert_eq!(
            r.annotator_attrs[&AttributeKey::Gender],
            BTreeSet::from(["transgender women".to_string()])
        );
        let r = a
            .adapt(&row(&[("hatespeech", "0"), ("annotator_transgender", "True")]))
            .unwrap();
        assert_eq!(
            r.annotator_attrs[&AttributeKey::Gender],
            BTreeSet::from(["transgender unspecified".to_string()])
        );
    }

    #[test]
    fn age_is_binned() {
        let a = adapter();
        for (age, group) in [("19", "teenagers"), ("20", "young adults"), ("45.0", "middle aged"), ("71", "seniors")] {
            let r = a.adapt(&row(&[("hatespeech", "0"), ("annotator_age", age)])).unwrap();
            assert_eq!(r.annotator_attrs[&AttributeKey::Age], BTreeSet::from([group.to_string()]));
        }
    }

    #[test]
    fn contradictory_single_choice_is_kept() {
        let r = adapter()
            .adapt(&row(&[
                ("hatespeech", "0"),
                ("annotator_income_<10k", "True"),
                ("annotator_income_>200k", "True"),
            ]))
            .unwrap();
        assert_eq!(r.annotator_attrs[&AttributeKey::Income].len(), 2);
    }

    #[test]
    fn bad_indicator_cell_is_an_error() {
        assert!(adapter()
            .adapt(&row(&[("hatespeech", "0"), ("target_race_black", "perhaps")]))
            .is_err());
    }

    #[test]
    fn mapping_value_outside_vocabulary_is_rejected() {
        let m = ColumnMapping::from_toml_str(
            r#"
post_id_column = "c"
annotator_id_column = "a"
label_column = "l"
[[rule]]
kind = "indicator"
side = "target"
key = "race"
value = "martian"
all = ["x"]
"#,
        )
        .unwrap();
        assert!(MhsAdapter::new(m, Arc::new(AttributeSchema::mhs_default())).is_err());
    }

    #[test]
    fn ingest_deduplicates_record_ids_and_collects_texts() {
        let csv = "comment_id,annotator_id,hatespeech,text,target_race_black\n1,7,2,hello,True\n1,7,1,hello,False\n2,7,0,bye,\n";
        let out = adapter().ingest(csv.as_bytes(), "t").unwrap();
        let ids: Vec<&str> = out.corpus.records().iter().map(|r| r.record_id.as_str()).collect();
        assert_eq!(ids, ["1:7", "1:7#2", "2:7"]);
        assert_eq!(out.texts["1"], "hello");
        assert_eq!(out.rows, 3);
    }
}

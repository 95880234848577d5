//! Canonical CSV and JSON-lines corpus formats.
//!
//! CSV header: `record_id,post_id,annotator_id,label,source,text_fingerprint`
//! followed by `annotator_<key>` for every annotator-side attribute and
//! `target_<key>` for every target-side attribute. Multi-valued cells are
//! `|`-joined; an empty cell is an empty set. `text_fingerprint` and the
//! attribute columns may be omitted on input.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, AttrMap, AttributeKey, AttributeSchema, Corpus, Label, Side, Source};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    CanonicalCsv,
    CanonicalJsonl,
}

impl Format {
    /// Guess from the file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::CanonicalJsonl,
            _ => Format::CanonicalCsv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical_csv" | "csv" => Ok(Format::CanonicalCsv),
            "canonical_jsonl" | "jsonl" => Ok(Format::CanonicalJsonl),
            other => Err(Error::InvalidInput(format!("unknown corpus format `{other}`"))),
        }
    }
}

const BASE_COLUMNS: [&str; 5] = ["record_id", "post_id", "annotator_id", "label", "source"];

pub(crate) fn attribute_columns() -> Vec<(Side, AttributeKey, String)> {
    [Side::Annotator, Side::Target]
        .into_iter()
        .flat_map(|side| {
            AttributeKey::for_side(side).map(move |k| (side, k, format!("{side}_{}", k.name())))
        })
        .collect()
}

pub fn load_corpus(path: &Path, format: Format, schema: Arc<AttributeSchema>) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    match format {
        Format::CanonicalCsv => read_canonical_csv(file, &label, schema),
        Format::CanonicalJsonl => read_canonical_jsonl(BufReader::new(file), &label, schema),
    }
}

fn parse_value_set(cell: &str) -> std::result::Result<BTreeSet<String>, String> {
    let mut out = BTreeSet::new();
    if cell.trim().is_empty() {
        return Ok(out);
    }
    for v in cell.split('|') {
        let v = v.trim();
        if v.is_empty() {
            return Err(format!("empty value in `{cell}`"));
        }
        if !out.insert(v.to_string()) {
            return Err(format!("duplicate value `{v}` in `{cell}`"));
        }
    }
    Ok(out)
}

pub fn read_canonical_csv<R: Read>(reader: R, source_name: &str, schema: Arc<AttributeSchema>) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();

    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut base = [0usize; 5];
    for (slot, name) in base.iter_mut().zip(BASE_COLUMNS) {
        *slot = col(name)
            .ok_or_else(|| Error::parse(source_name, 1, format!("missing column `{name}`")))?;
    }
    let fingerprint_col = col("text_fingerprint");

    let known = attribute_columns();
    let mut attr_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if BASE_COLUMNS.contains(&h) || h == "text_fingerprint" {
            continue;
        }
        match known.iter().find(|(_, _, name)| name == h) {
            Some((side, key, _)) => attr_cols.push((i, *side, *key)),
            None => return Err(Error::parse(source_name, 1, format!("unknown column `{h}`"))),
        }
    }

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let perr = |m: String| Error::parse(source_name, line, m);
        let get = |i: usize| row.get(i).unwrap_or("");

        let label = get(base[3]).parse::<Label>().map_err(|e| perr(e.to_string()))?;
        let source = get(base[4]).parse::<Source>().map_err(|e| perr(e.to_string()))?;
        let mut rec = AnnotationRecord {
            record_id: get(base[0]).to_string(),
            post_id: get(base[1]).to_string(),
            text_fingerprint: fingerprint_col.map(get).unwrap_or("").to_string(),
            annotator_id: get(base[2]).to_string(),
            label,
            annotator_attrs: AttrMap::new(),
            target_attrs: AttrMap::new(),
            source,
        };
        if rec.record_id.is_empty() || rec.post_id.is_empty() || rec.annotator_id.is_empty() {
            return Err(perr("record_id, post_id and annotator_id must be non-empty".into()));
        }
        for &(i, side, key) in &attr_cols {
            let set = parse_value_set(get(i)).map_err(perr)?;
            if set.is_empty() {
                continue;
            }
            match side {
                Side::Annotator => rec.annotator_attrs.insert(key, set),
                Side::Target => rec.target_attrs.insert(key, set),
            };
        }
        schema
            .validate_record(&rec)
            .map_err(|e| perr(e.to_string()))?;
        if !ids.insert(rec.record_id.clone()) {
            return Err(perr(Error::DuplicateRecord(rec.record_id).to_string()));
        }
        records.push(rec);
    }
    Corpus::new(records, schema)
}

pub fn write_canonical_csv<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    write_records_csv(corpus.records(), corpus.schema(), writer)
}

pub(crate) fn write_records_csv<W: Write>(
    records: &[AnnotationRecord],
    schema: &AttributeSchema,
    writer: W,
) -> Result<()> {
    let to_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let cols = attribute_columns();
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    header.push("text_fingerprint");
    header.extend(cols.iter().map(|(_, _, n)| n.as_str()));
    w.write_record(&header).map_err(to_err)?;

    for r in records {
        let mut row: Vec<String> = vec![
            r.record_id.clone(),
            r.post_id.clone(),
            r.annotator_id.clone(),
            r.label.as_str().into(),
            r.source.as_str().into(),
            r.text_fingerprint.clone(),
        ];
        for (side, key, _) in &cols {
            row.push(
                r.values(*side, *key)
                    .map(|s| schema.ordered(*key, s).join("|"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    record_id: String,
    post_id: String,
    #[serde(default)]
    text_fingerprint: String,
    annotator_id: String,
    label: Label,
    #[serde(default)]
    annotator_attrs: BTreeMap<AttributeKey, Vec<String>>,
    #[serde(default)]
    target_attrs: BTreeMap<AttributeKey, Vec<String>>,
    source: Source,
}

fn to_set(list: Vec<String>) -> std::result::Result<BTreeSet<String>, String> {
    let mut set = BTreeSet::new();
    for v in list {
        if !set.insert(v.clone()) {
            return Err(format!("duplicate value `{v}`"));
        }
    }
    Ok(set)
}

pub fn read_canonical_jsonl<R: BufRead>(reader: R, source_name: &str, schema: Arc<AttributeSchema>) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: String| Error::parse(source_name, lineno, m);
        let raw: JsonRecord = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        let mut annotator_attrs = AttrMap::new();
        for (k, v) in raw.annotator_attrs {
            annotator_attrs.insert(k, to_set(v).map_err(perr)?);
        }
        let mut target_attrs = AttrMap::new();
        for (k, v) in raw.target_attrs {
            target_attrs.insert(k, to_set(v).map_err(perr)?);
        }
        let mut rec = AnnotationRecord {
            record_id: raw.record_id,
            post_id: raw.post_id,
            text_fingerprint: raw.text_fingerprint,
            annotator_id: raw.annotator_id,
            label: raw.label,
            annotator_attrs,
            target_attrs,
            source: raw.source,
        };
        rec.normalise();
        schema.validate_record(&rec).map_err(|e| perr(e.to_string()))?;
        if !ids.insert(rec.record_id.clone()) {
            return Err(perr(Error::DuplicateRecord(rec.record_id).to_string()));
        }
        records.push(rec);
    }
    Corpus::new(records, schema)
}

pub fn write_canonical_jsonl<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    let schema = corpus.schema();
    let ordered = |m: &AttrMap| -> BTreeMap<AttributeKey, Vec<String>> {
        m.iter()
            .map(|(k, s)| (*k, schema.ordered(*k, s).into_iter().map(String::from).collect()))
            .collect()
    };
    for r in corpus.records() {
        let j = JsonRecord {
            record_id: r.record_id.clone(),
            post_id: r.post_id.clone(),
            text_fingerprint: r.text_fingerprint.clone(),
            annotator_id: r.annotator_id.clone(),
            label: r.label,
            annotator_attrs: ordered(&r.annotator_attrs),
            target_attrs: ordered(&r.target_attrs),
            source: r.source,
        };
        let line = serde_json::to_string(&j).map_err(|e| Error::InvalidInput(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

/// `post_id,text` table written next to an ingested corpus.
pub fn write_texts_csv<W: Write>(texts: &BTreeMap<String, String>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::InvalidInput(format!("writing texts: {e}"));
    w.write_record(["post_id", "text"]).map_err(err)?;
    for (post, text) in texts {
        w.write_record([post, text]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("writing texts: {e}")))
}

pub fn read_texts_csv(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| Error::parse(&name, 1, e.to_string()))?;
    if header.iter().ne(["post_id", "text"]) {
        return Err(Error::parse(&name, 1, "expected header `post_id,text`"));
    }
    let mut out = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::parse(&name, i as u64 + 2, e.to_string()))?;
        out.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Arc<AttributeSchema> {
        Arc::new(AttributeSchema::mhs_default())
    }

    fn header() -> String {
        let mut h: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
        h.push("text_fingerprint".into());
        h.extend(attribute_columns().into_iter().map(|(_, _, n)| n));
        h.join(",")
    }

    #[test]
    fn empty_file_with_header_loads_zero_records() {
        let c = read_canonical_csv(format!("{}\n", header()).as_bytes(), "t", schema()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn single_row_maps_label_and_gender() {
        let csv = "record_id,post_id,annotator_id,label,source,annotator_gender\n1,p1,a1,hate,human,women\n";
        let c = read_canonical_csv(csv.as_bytes(), "t", schema()).unwrap();
        let r = &c.records()[0];
        assert_eq!(r.label, Label::Hate);
        assert_eq!(
            r.values(Side::Annotator, AttributeKey::Gender).unwrap(),
            &BTreeSet::from(["women".to_string()])
        );
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let csv = "record_id,post_id,annotator_id,label,source\n1,p1,a1,hate,human\n2,p1,a2,terrible,human\n";
        match read_canonical_csv(csv.as_bytes(), "t", schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_attribute_value_is_a_schema_violation() {
        let csv = "record_id,post_id,annotator_id,label,source,target_race\n1,p1,a1,hate,human,martian\n";
        let err = read_canonical_csv(csv.as_bytes(), "t", schema()).unwrap_err();
        assert!(err.to_string().contains("martian"), "{err}");
    }

    #[test]
    fn duplicate_record_id_is_reported() {
        let csv = "record_id,post_id,annotator_id,label,source\n1,p1,a1,hate,human\n1,p2,a1,hate,human\n";
        let err = read_canonical_csv(csv.as_bytes(), "t", schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn duplicate_value_in_cell_is_rejected() {
        let csv = "record_id,post_id,annotator_id,label,source,annotator_race\n1,p1,a1,hate,human,white|white\n";
        assert!(read_canonical_csv(csv.as_bytes(), "t", schema()).is_err());
    }

    #[test]
    fn unknown_column_is_rejected() {
        let csv = "record_id,post_id,annotator_id,label,source,annotator_height\n";
        assert!(read_canonical_csv(csv.as_bytes(), "t", schema()).is_err());
    }

    #[test]
    fn target_only_attribute_on_annotator_side_does_not_exist() {
        assert!(!attribute_columns().iter().any(|(_, _, n)| n == "annotator_origin"));
        assert!(!attribute_columns().iter().any(|(_, _, n)| n == "target_income"));
    }

    #[test]
    fn multi_valued_cells_round_trip_in_vocabulary_order() {
        let csv = "record_id,post_id,annotator_id,label,source,annotator_race\n1,p1,a1,maybe,human,white|black\n";
        let c = read_canonical_csv(csv.as_bytes(), "t", schema()).unwrap();
        let mut out = Vec::new();
        write_canonical_csv(&c, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains(",black|white,"), "{text}");
        let again = read_canonical_csv(text.as_bytes(), "t", schema()).unwrap();
        assert_eq!(again.records(), c.records());
    }

    #[test]
    fn jsonl_round_trip() {
        let csv = "record_id,post_id,annotator_id,label,source,annotator_race,target_gender\n1,p1,a1,maybe,llm,white|black,women\n2,p1,a2,hate,llm,,\n";
        let c = read_canonical_csv(csv.as_bytes(), "t", schema()).unwrap();
        let mut out = Vec::new();
        write_canonical_jsonl(&c, &mut out).unwrap();
        let back = read_canonical_jsonl(out.as_slice(), "t", schema()).unwrap();
        assert_eq!(back.records(), c.records());
    }
}

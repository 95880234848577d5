//! Findings tables, run manifests and plot specifications.

mod plot;

pub use plot::{
    color_for, heatmap_spec, heatmap_svg, scatter_from_comparison, scatter_from_findings, scatter_svg, HeatCell,
    HeatmapSpec, ScatterPoint, ScatterSpec, Space,
};

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeKey, Side};
use crate::error::{Error, Result};
use crate::pairing::GroupSelector;
use crate::pipelines::BiasFinding;
use crate::util::write_atomic;

pub const FINDINGS_HEADER: [&str; 11] = [
    "annotator_attribute",
    "annotator_value",
    "target_attribute",
    "target_value",
    "n_pairs",
    "intensity",
    "prevalence",
    "kappa",
    "p_raw",
    "p_adjusted",
    "significant",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub corpus_hash: String,
    /// RFC 3339; taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
}

impl Manifest {
    pub fn new(config_hash: impl Into<String>, corpus_hash: impl Into<String>) -> Self {
        let epoch = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<i64>().ok());
        let at = epoch.and_then(|s| DateTime::<Utc>::from_timestamp(s, 0)).unwrap_or_else(Utc::now);
        Manifest::at(config_hash, corpus_hash, at)
    }

    pub fn at(config_hash: impl Into<String>, corpus_hash: impl Into<String>, at: DateTime<Utc>) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
            corpus_hash: corpus_hash.into(),
            timestamp: at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidInput(format!("unknown findings format `{other}`"))),
        }
    }
}

/// One CSV row, with reals as printed.
#[derive(Clone, Debug, PartialEq)]
pub struct FindingRow {
    pub ann_sel: GroupSelector,
    pub tgt_sel: Option<GroupSelector>,
    pub n_pairs: u64,
    pub intensity: Option<f64>,
    pub prevalence: Option<f64>,
    pub kappa: Option<f64>,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

fn fixed(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) => {
            let s = format!("{x:.4}");
            if s == "-0.0000" {
                "0.0000".into()
            } else {
                s
            }
        }
    }
}

fn sci(p: f64) -> String {
    format!("{p:.4e}")
}

fn cells(f: &BiasFinding) -> [String; 11] {
    let (ta, tv) = match &f.tgt_sel {
        Some(t) => (t.key.name().to_string(), t.value.clone()),
        None => (String::new(), String::new()),
    };
    [
        f.ann_sel.key.name().to_string(),
        f.ann_sel.value.clone(),
        ta,
        tv,
        f.matrix.n_pairs().to_string(),
        fixed(f.indicators.intensity),
        fixed(f.indicators.prevalence),
        fixed(f.indicators.kappa),
        sci(f.p_raw),
        sci(f.p_adjusted),
        f.significant.to_string(),
    ]
}

impl FindingRow {
    /// The row a finding serialises to, after rounding.
    pub fn of(f: &BiasFinding) -> Self {
        let c = cells(f);
        parse_row(&c.iter().map(String::as_str).collect::<Vec<_>>(), 0).expect("own output parses")
    }
}

pub fn write_findings_csv<W: Write>(findings: &[BiasFinding], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::InvalidInput(format!("writing findings: {e}"));
    out.write_record(FINDINGS_HEADER).map_err(io)?;
    for f in findings {
        out.write_record(cells(f)).map_err(io)?;
    }
    out.flush().map_err(|e| Error::InvalidInput(format!("writing findings: {e}")))
}

fn parse_row(r: &[&str], line: u64) -> Result<FindingRow> {
    let err = |m: String| Error::parse("<findings>", line, m);
    if r.len() != FINDINGS_HEADER.len() {
        return Err(err(format!("expected {} fields, found {}", FINDINGS_HEADER.len(), r.len())));
    }
    let key = |s: &str| s.parse::<AttributeKey>().map_err(|e| err(e.to_string()));
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| err(format!("bad number `{s}`")))
        }
    };
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| err(format!("bad number `{s}`"))) };
    let tgt_sel = if r[2].is_empty() {
        None
    } else {
        Some(GroupSelector::new(Side::Target, key(r[2])?, r[3]))
    };
    Ok(FindingRow {
        ann_sel: GroupSelector::new(Side::Annotator, key(r[0])?, r[1]),
        tgt_sel,
        n_pairs: r[4].parse().map_err(|_| err(format!("bad n_pairs `{}`", r[4])))?,
        intensity: opt(r[5])?,
        prevalence: opt(r[6])?,
        kappa: opt(r[7])?,
        p_raw: num(r[8])?,
        p_adjusted: num(r[9])?,
        significant: match r[10] {
            "true" => true,
            "false" => false,
            other => return Err(err(format!("bad boolean `{other}`"))),
        },
    })
}

pub fn read_findings_csv<R: Read>(r: R) -> Result<Vec<FindingRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse("<findings>", 1, e.to_string()))?
        .clone();
    if header.iter().ne(FINDINGS_HEADER) {
        return Err(Error::parse("<findings>", 1, "unexpected findings header"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse("<findings>", line, e.to_string()))?;
        out.push(parse_row(&rec.iter().collect::<Vec<_>>(), line)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FindingsDocument {
    pub manifest: Manifest,
    pub alpha: f64,
    pub findings: Vec<BiasFinding>,
}

pub fn write_findings_json<W: Write>(doc: &FindingsDocument, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, doc).map_err(|e| Error::InvalidInput(format!("writing findings: {e}")))?;
    w.write_all(b"\n").map_err(|e| Error::io("<findings>", e))
}

pub fn read_findings_json(path: &Path) -> Result<FindingsDocument> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e.line() as u64, e.to_string()))
}

/// Write findings to `path`; CSV gets a `<stem>.manifest.json` sidecar.
pub fn emit_findings(doc: &FindingsDocument, format: Format, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        Format::Json => write_findings_json(doc, &mut buf)?,
        Format::Csv => {
            write_findings_csv(&doc.findings, &mut buf)?;
            let mut m = serde_json::to_vec_pretty(&doc.manifest).expect("manifest serialises");
            m.push(b'\n');
            write_atomic(&path.with_extension("manifest.json"), &m)?;
        }
    }
    write_atomic(path, &buf)
}

/// Recomputes each finding's indicators from its matrix.
pub fn verify_findings(findings: &[BiasFinding]) -> Result<()> {
    for f in findings {
        if crate::metrics::BiasIndicators::of(&f.matrix) != f.indicators {
            return Err(Error::InvalidInput(format!(
                "finding {} × {:?} has indicators that do not match its matrix",
                f.ann_sel, f.tgt_sel
            )));
        }
    }
    Ok(())
}

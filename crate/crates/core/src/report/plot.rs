use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BiasIndicators;
use crate::pairing::GroupSelector;
use crate::pipelines::{BiasFinding, Comparison};

const CELL: f64 = 14.0;
const ROW_LABELS: f64 = 230.0;
const COL_LABELS: f64 = 190.0;

fn selector_label(s: &GroupSelector) -> String {
    format!("{}: {}", s.key, s.value)
}

fn pair_label(ann: &GroupSelector, tgt: Option<&GroupSelector>) -> String {
    match tgt {
        Some(t) => format!("{} × {}", selector_label(ann), selector_label(t)),
        None => selector_label(ann),
    }
}

/// Diverging colour: blue at −1, white at 0, red at +1.
pub fn color_for(intensity: f64) -> String {
    let i = intensity.clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    let (r, g, b) = if i >= 0.0 {
        (255, fade(i), fade(i))
    } else {
        (fade(-i), fade(-i), 255)
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub row: usize,
    pub col: usize,
    pub intensity: f64,
    pub color: String,
    pub prevalence: f64,
    /// Share of the cell the square covers; equals prevalence.
    pub area: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Significant findings only.
    pub cells: Vec<HeatCell>,
}

fn index_of(list: &mut Vec<String>, label: String) -> usize {
    match list.iter().position(|l| *l == label) {
        Some(i) => i,
        None => {
            list.push(label);
            list.len() - 1
        }
    }
}

pub fn heatmap_spec(findings: &[BiasFinding]) -> HeatmapSpec {
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut cells = Vec::new();
    for f in findings {
        let row = index_of(&mut rows, selector_label(&f.ann_sel));
        let col = index_of(&mut cols, f.tgt_sel.as_ref().map(selector_label).unwrap_or_default());
        let (Some(i), Some(p)) = (f.indicators.intensity, f.indicators.prevalence) else {
            continue;
        };
        if !f.significant || p <= 0.0 {
            continue;
        }
        cells.push(HeatCell {
            row,
            col,
            intensity: i,
            color: color_for(i),
            prevalence: p,
            area: p.min(1.0),
            significant: true,
        });
    }
    HeatmapSpec { rows, cols, cells }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn heatmap_svg(spec: &HeatmapSpec) -> String {
    let w = ROW_LABELS + CELL * spec.cols.len() as f64 + 10.0;
    let h = COL_LABELS + CELL * spec.rows.len() as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##);
    for (i, r) in spec.rows.iter().enumerate() {
        let y = COL_LABELS + CELL * (i as f64 + 0.75);
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, ROW_LABELS - 4.0, esc(r));
    }
    for (j, c) in spec.cols.iter().enumerate() {
        let x = ROW_LABELS + CELL * (j as f64 + 0.75);
        let y = COL_LABELS - 4.0;
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" transform="rotate(-90 {x} {y})">{}</text>"#, esc(c));
    }
    let _ = writeln!(
        s,
        r##"<rect x="{ROW_LABELS}" y="{COL_LABELS}" width="{}" height="{}" fill="none" stroke="#cccccc"/>"##,
        CELL * spec.cols.len() as f64,
        CELL * spec.rows.len() as f64
    );
    for c in &spec.cells {
        let side = CELL * c.area.sqrt();
        let x = ROW_LABELS + CELL * c.col as f64 + (CELL - side) / 2.0;
        let y = COL_LABELS + CELL * c.row as f64 + (CELL - side) / 2.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{side:.3}" height="{side:.3}" fill="{}"><title>I={:.4} P={:.4}</title></rect>"#,
            c.color, c.intensity, c.prevalence
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    IntensityKappa,
    IntensityPrevalence,
    HumanLlmIntensity,
    HumanLlmPrevalence,
    HumanLlmKappa,
}

impl Space {
    fn axes(self) -> (&'static str, &'static str, [f64; 2], [f64; 2]) {
        const SIGNED: [f64; 2] = [-1.0, 1.0];
        const UNIT: [f64; 2] = [0.0, 1.0];
        match self {
            Space::IntensityKappa => ("intensity", "kappa", SIGNED, SIGNED),
            Space::IntensityPrevalence => ("intensity", "prevalence", SIGNED, UNIT),
            Space::HumanLlmIntensity => ("human intensity", "llm intensity", SIGNED, SIGNED),
            Space::HumanLlmPrevalence => ("human prevalence", "llm prevalence", UNIT, UNIT),
            Space::HumanLlmKappa => ("human kappa", "llm kappa", SIGNED, SIGNED),
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::InvalidInput(format!("unknown scatter space `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterSpec {
    pub space: Space,
    pub x_label: String,
    pub y_label: String,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub points: Vec<ScatterPoint>,
    /// Pearson r for the comparison spaces.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r: Option<f64>,
}

fn empty_scatter(space: Space) -> ScatterSpec {
    let (xl, yl, xr, yr) = space.axes();
    ScatterSpec {
        space,
        x_label: xl.into(),
        y_label: yl.into(),
        x_range: xr,
        y_range: yr,
        points: Vec::new(),
        r: None,
    }
}

fn in_range(v: f64, r: [f64; 2]) -> f64 {
    v.clamp(r[0], r[1])
}

/// Significant findings in the intensity/kappa or intensity/prevalence plane.
pub fn scatter_from_findings(findings: &[BiasFinding], space: Space) -> Result<ScatterSpec> {
    let get: fn(&BiasIndicators) -> Option<f64> = match space {
        Space::IntensityKappa => |b| b.kappa,
        Space::IntensityPrevalence => |b| b.prevalence,
        _ => return Err(Error::InvalidInput(format!("{space:?} needs a human/LLM comparison"))),
    };
    let mut spec = empty_scatter(space);
    for f in findings.iter().filter(|f| f.significant) {
        if let (Some(x), Some(y)) = (f.indicators.intensity, get(&f.indicators)) {
            spec.points.push(ScatterPoint {
                x: in_range(x, spec.x_range),
                y: in_range(y, spec.y_range),
                label: pair_label(&f.ann_sel, f.tgt_sel.as_ref()),
            });
        }
    }
    Ok(spec)
}

/// Human value on x, LLM value on y, one point per matched finding.
pub fn scatter_from_comparison(cmp: &Comparison, space: Space) -> Result<ScatterSpec> {
    let (get, r): (fn(&BiasIndicators) -> Option<f64>, _) = match space {
        Space::HumanLlmIntensity => (|b| b.intensity, cmp.r_intensity),
        Space::HumanLlmPrevalence => (|b| b.prevalence, cmp.r_prevalence),
        Space::HumanLlmKappa => (|b| b.kappa, cmp.r_kappa),
        _ => return Err(Error::InvalidInput(format!("{space:?} is not a comparison space"))),
    };
    let mut spec = empty_scatter(space);
    spec.r = r;
    for c in &cmp.records {
        if let (Some(x), Some(y)) = (get(&c.human), get(&c.llm)) {
            spec.points.push(ScatterPoint {
                x: in_range(x, spec.x_range),
                y: in_range(y, spec.y_range),
                label: pair_label(&c.ann_sel, c.tgt_sel.as_ref()),
            });
        }
    }
    Ok(spec)
}

pub fn scatter_svg(spec: &ScatterSpec) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 50.0;
    let px = |x: f64| PAD + (x - spec.x_range[0]) / (spec.x_range[1] - spec.x_range[0]) * SIZE;
    let py = |y: f64| PAD + SIZE - (y - spec.y_range[0]) / (spec.y_range[1] - spec.y_range[0]) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="{total}" height="{total}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r##"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#333333"/>"##);
    for (v, horizontal) in [(0.0, true), (0.0, false)] {
        let range = if horizontal { spec.y_range } else { spec.x_range };
        if v > range[0] && v < range[1] {
            if horizontal {
                let y = py(v);
                let _ = writeln!(s, r##"<line x1="{PAD}" y1="{y}" x2="{}" y2="{y}" stroke="#bbbbbb"/>"##, PAD + SIZE);
            } else {
                let x = px(v);
                let _ = writeln!(s, r##"<line x1="{x}" y1="{PAD}" x2="{x}" y2="{}" stroke="#bbbbbb"/>"##, PAD + SIZE);
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        PAD + SIZE / 2.0,
        total - 12.0,
        esc(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0,
        esc(&spec.y_label)
    );
    for (v, x) in [(spec.x_range[0], px(spec.x_range[0])), (spec.x_range[1], px(spec.x_range[1]))] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v}</text>"#, PAD + SIZE + 14.0);
    }
    for (v, y) in [(spec.y_range[0], py(spec.y_range[0])), (spec.y_range[1], py(spec.y_range[1]))] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, PAD - 4.0, y + 4.0);
    }
    if let Some(r) = spec.r {
        let _ = writeln!(s, r##"<text x="{}" y="{}" fill="#cc0000">r = {r:.3}</text>"##, PAD + 6.0, PAD + 14.0);
    }
    for p in &spec.points {
        let fill = if spec.x_label.contains("intensity") { color_for(p.x) } else { "#555555".into() };
        let _ = writeln!(
            s,
            r##"<circle cx="{:.3}" cy="{:.3}" r="3" fill="{fill}" stroke="#333333" stroke-width="0.5"><title>{}</title></circle>"##,
            px(p.x),
            py(p.y),
            esc(&p.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::tests::finding;

    #[test]
    fn palette_endpoints() {
        assert_eq!(color_for(1.0), "#ff0000");
        assert_eq!(color_for(-1.0), "#0000ff");
        assert_eq!(color_for(0.0), "#ffffff");
        assert_eq!(color_for(7.0), "#ff0000");
    }

    #[test]
    fn empty_heatmap_is_valid() {
        let spec = heatmap_spec(&[]);
        assert!(spec.cells.is_empty());
        let svg = heatmap_svg(&spec);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn only_significant_cells_are_drawn() {
        let a = finding([[10, 2, 1], [3, 8, 0], [4, 1, 9]], 0.01, true);
        let b = finding([[10, 2, 1], [3, 8, 0], [4, 1, 9]], 0.5, false);
        let spec = heatmap_spec(&[a, b]);
        assert_eq!(spec.cells.len(), 1);
        assert!(spec.cells.iter().all(|c| c.significant && c.area > 0.0 && c.area <= 1.0));
    }

    #[test]
    fn area_tracks_prevalence() {
        let mut a = finding([[1, 1, 0], [0, 0, 0], [0, 0, 0]], 0.01, true);
        let mut b = finding([[3, 1, 0], [0, 0, 0], [0, 0, 0]], 0.01, true);
        assert_eq!(a.indicators.prevalence, Some(0.5));
        assert_eq!(b.indicators.prevalence, Some(0.25));
        b.ann_sel.value = "women".into();
        a.tgt_sel.as_mut().unwrap().value = "gay".into();
        let spec = heatmap_spec(&[a, b]);
        assert_eq!(spec.cells[0].area / spec.cells[1].area, 2.0);
    }

    #[test]
    fn scatter_axes_are_bounded() {
        let f = finding([[10, 2, 1], [3, 8, 0], [4, 1, 9]], 0.01, true);
        let s = scatter_from_findings(&[f], Space::IntensityPrevalence).unwrap();
        assert_eq!((s.x_range, s.y_range), ([-1.0, 1.0], [0.0, 1.0]));
        assert_eq!(s.points.len(), 1);
        assert!(scatter_from_findings(&[], Space::HumanLlmKappa).is_err());
        assert!(scatter_svg(&s).contains("<circle"));
        assert_eq!("intensity_kappa".parse::<Space>().unwrap(), Space::IntensityKappa);
    }
}

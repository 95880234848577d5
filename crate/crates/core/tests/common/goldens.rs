//! Byte-for-byte checks of everything the fixture corpus produces.

use annobias::corpus::{write_canonical_csv, AttrMap};
use annobias::llm::{target_list, PersonaProfile, PromptTemplate, TemplateId};
use annobias::report::{
    heatmap_spec, heatmap_svg, scatter_from_findings, scatter_svg, write_findings_csv, write_findings_json,
    FindingsDocument, Manifest, Space,
};
use annobias::{synth, Audit, AttributeKey, AttributeSchema, RunConfig};
use chrono::{TimeZone, Utc};
use std::collections::BTreeSet;

use super::{fixture_corpus, fixture_synth_config, golden};

fn json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).unwrap();
    b.push(b'\n');
    b
}

/// One `(file, outcome)` per golden file.
pub fn check_all() -> Vec<(String, Result<(), String>)> {
    let mut out = Vec::new();
    let mut check = |name: &str, bytes: Vec<u8>| out.push((name.to_string(), golden(name, &bytes)));

    let generated = synth::generate(&fixture_synth_config()).unwrap();
    let mut csv = Vec::new();
    write_canonical_csv(&generated, &mut csv).unwrap();
    check("fixture_corpus.csv", csv);
    check("fixture_vocabulary.toml", generated.schema().vocabulary_toml().into_bytes());

    let corpus = fixture_corpus();
    let findings = Audit::new(&corpus, Default::default()).cross().unwrap();
    let mut csv = Vec::new();
    write_findings_csv(&findings, &mut csv).unwrap();
    check("golden/rq1b_findings.csv", csv);

    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let doc = FindingsDocument {
        manifest: Manifest::at(RunConfig::default().hash(), corpus.content_hash(), at),
        alpha: 0.1,
        findings,
    };
    let mut js = Vec::new();
    write_findings_json(&doc, &mut js).unwrap();
    check("golden/rq1b_findings.json", js);

    let heat = heatmap_spec(&doc.findings);
    check("golden/heatmap.json", json(&heat));
    check("golden/heatmap.svg", heatmap_svg(&heat).into_bytes());
    for (space, stem) in [
        (Space::IntensityKappa, "scatter_intensity_kappa"),
        (Space::IntensityPrevalence, "scatter_intensity_prevalence"),
    ] {
        let spec = scatter_from_findings(&doc.findings, space).unwrap();
        check(&format!("golden/{stem}.json"), json(&spec));
        check(&format!("golden/{stem}.svg"), scatter_svg(&spec).into_bytes());
    }

    let schema = AttributeSchema::mhs_default();
    let mut attrs = AttrMap::new();
    attrs.insert(AttributeKey::Gender, BTreeSet::from(["transgender women".to_string()]));
    attrs.insert(AttributeKey::Age, BTreeSet::from(["young adults".to_string()]));
    attrs.insert(AttributeKey::Race, BTreeSet::from(["black".to_string(), "white".to_string()]));
    attrs.insert(AttributeKey::Religion, BTreeSet::from(["atheist".to_string()]));
    let persona = PersonaProfile::new(attrs, &schema).unwrap();
    let targets = target_list(&schema);
    let text = "An example post, used only to pin the rendered prompt.";
    for id in TemplateId::ALL {
        let t = PromptTemplate::builtin(id);
        let mut s = t.render(&persona, text, &targets, 7).unwrap();
        s.push_str("\n----- base -----\n");
        s.push_str(&t.render_base(text, &targets).unwrap());
        check(&format!("golden/prompt_{}.txt", id.as_str()), s.into_bytes());
    }
    out
}

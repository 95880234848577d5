mod common;

use std::fs::File;
use std::sync::Arc;

use annobias::corpus::{
    corpus_stats, read_canonical_csv, read_texts_csv, write_canonical_csv, write_texts_csv, ColumnMapping, MhsAdapter,
};
use annobias::report::{
    emit_findings, read_findings_csv, read_findings_json, verify_findings, FindingsDocument, Format, Manifest,
};
use annobias::{run_in_group, Audit, AttributeKey, AttributeSchema, Label, MatrixCache, RunConfig};

#[test]
fn raw_export_ingests_and_round_trips() {
    let schema = Arc::new(AttributeSchema::mhs_default());
    let adapter = MhsAdapter::new(ColumnMapping::mhs_default(), schema.clone()).unwrap();
    let out = adapter
        .ingest(File::open(common::fixture("mhs_sample.csv")).unwrap(), "mhs_sample.csv")
        .unwrap();
    assert_eq!(out.rows, 48);
    assert_eq!(out.corpus.len(), 48);
    assert_eq!(out.texts.len(), 12);
    assert_eq!(out.texts["1001"], "fixture post number 1, with a comma");

    let stats = corpus_stats(&out.corpus);
    assert_eq!(stats.posts, 12);
    assert_eq!(stats.label_counts.iter().sum::<usize>(), 48);

    let mut buf = Vec::new();
    write_canonical_csv(&out.corpus, &mut buf).unwrap();
    let back = read_canonical_csv(buf.as_slice(), "mem", schema).unwrap();
    assert_eq!(back.records(), out.corpus.records());
    assert_eq!(back.content_hash(), out.corpus.content_hash());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("posts.csv");
    let mut f = File::create(&p).unwrap();
    write_texts_csv(&out.texts, &mut f).unwrap();
    assert_eq!(read_texts_csv(&p).unwrap(), out.texts);

    // transgender women carry both indicators in the raw export
    assert!(out.corpus.records().iter().any(|r| r
        .values(annobias::Side::Annotator, AttributeKey::Gender)
        .is_some_and(|v| v.contains("transgender women"))));
    assert!(out.corpus.records().iter().all(|r| Label::ALL.contains(&r.label)));
}

#[test]
fn audits_are_repeatable_and_parallel_agrees_with_sequential() {
    let corpus = common::fixture_corpus();
    let par = Audit::new(&corpus, Default::default()).cross().unwrap();
    let seq_cfg = annobias::AuditConfig {
        parallel: false,
        ..Default::default()
    };
    let seq = Audit::new(&corpus, seq_cfg).cross().unwrap();
    assert_eq!(par, seq);
    assert_eq!(par, Audit::new(&corpus, Default::default()).cross().unwrap());
    verify_findings(&par).unwrap();
    assert_eq!(run_in_group(&corpus, &Default::default()).unwrap().len(), 6);
}

#[test]
fn disk_cache_serves_a_second_sweep() {
    let corpus = common::fixture_corpus();
    let dir = tempfile::tempdir().unwrap();
    let first = Audit::with_cache(&corpus, Default::default(), MatrixCache::with_dir(dir.path()).unwrap());
    let a = first.cross().unwrap();
    assert_eq!(first.cache().hits(), 0);
    let second = Audit::with_cache(&corpus, Default::default(), MatrixCache::with_dir(dir.path()).unwrap());
    let b = second.cross().unwrap();
    assert_eq!(a, b);
    assert_eq!(second.cache().misses(), 0);
}

#[test]
fn emitted_files_reload_losslessly() {
    let corpus = common::fixture_corpus();
    let findings = Audit::new(&corpus, Default::default()).cross().unwrap();
    let doc = FindingsDocument {
        manifest: Manifest::new(RunConfig::default().hash(), corpus.content_hash()),
        alpha: 0.1,
        findings,
    };
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("f.json");
    let csv = dir.path().join("f.csv");
    emit_findings(&doc, Format::Json, &json).unwrap();
    emit_findings(&doc, Format::Csv, &csv).unwrap();
    assert!(dir.path().join("f.manifest.json").exists());

    let back = read_findings_json(&json).unwrap();
    assert_eq!(back, doc);
    let rows = read_findings_csv(File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), doc.findings.len());
    for (r, f) in rows.iter().zip(&doc.findings) {
        assert_eq!((&r.ann_sel, r.tgt_sel.as_ref()), f.key());
        assert_eq!(r.n_pairs, f.indicators.n_pairs);
        assert_eq!(r.significant, f.significant);
        let near = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (None, None) => true,
            (Some(x), Some(y)) => (x - y).abs() <= 5e-5,
            _ => false,
        };
        assert!(near(r.intensity, f.indicators.intensity));
        assert!(near(r.prevalence, f.indicators.prevalence));
        assert!(near(r.kappa, f.indicators.kappa));
        assert!((r.p_adjusted - f.p_adjusted).abs() <= 5e-5 * f.p_adjusted.max(f64::MIN_POSITIVE));
    }
}

//! In-group, cross-group and LLM sweeps plus the human/LLM comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_selectors, AttributeKey, Corpus, Side, Source};
use crate::error::{Error, Result};
use crate::metrics::{pearson, BiasIndicators};
use crate::pairing::{ConfusionMatrix, GroupSelector, MatrixCache};
use crate::stats::{holm_bonferroni, is_significant, mann_whitney_counts};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub alpha: f64,
    /// Findings with fewer pairs are still tested but flagged.
    pub min_pairs: u64,
    /// Use the rayon pool when the `parallel` feature is compiled in.
    pub parallel: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            alpha: 0.1,
            min_pairs: 30,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasFinding {
    pub ann_sel: GroupSelector,
    pub tgt_sel: Option<GroupSelector>,
    pub matrix: ConfusionMatrix,
    pub indicators: BiasIndicators,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    pub low_power: bool,
    pub corpus_tag: Source,
}

impl BiasFinding {
    pub fn key(&self) -> (&GroupSelector, Option<&GroupSelector>) {
        (&self.ann_sel, self.tgt_sel.as_ref())
    }
}

pub type Candidate = (GroupSelector, Option<GroupSelector>);

/// Shared `(key, value)` pairs present on both sides and excluded on neither.
pub fn in_group_candidates(corpus: &Corpus) -> Vec<Candidate> {
    let schema = corpus.schema();
    let mut out = Vec::new();
    for key in AttributeKey::SHARED {
        for v in schema.allowed_values(key) {
            if schema.is_excluded(Side::Annotator, key, v) || schema.is_excluded(Side::Target, key, v) {
                continue;
            }
            out.push((
                GroupSelector::annotator(key, v.clone()),
                Some(GroupSelector::target(key, v.clone())),
            ));
        }
    }
    out
}

/// Every annotator selector crossed with every target selector.
pub fn cross_candidates(corpus: &Corpus) -> Vec<Candidate> {
    let anns = enumerate_selectors(corpus.schema(), Side::Annotator);
    let tgts = enumerate_selectors(corpus.schema(), Side::Target);
    anns.iter()
        .flat_map(|a| tgts.iter().map(move |t| (a.clone(), Some(t.clone()))))
        .collect()
}

/// Runs sweeps over one corpus, sharing a matrix cache between them.
pub struct Audit<'c> {
    corpus: &'c Corpus,
    config: AuditConfig,
    cache: MatrixCache,
    tag: Source,
}

impl<'c> Audit<'c> {
    pub fn new(corpus: &'c Corpus, config: AuditConfig) -> Self {
        Audit::with_cache(corpus, config, MatrixCache::new())
    }

    pub fn with_cache(corpus: &'c Corpus, config: AuditConfig, cache: MatrixCache) -> Self {
        Audit {
            corpus,
            config,
            cache,
            tag: Source::Human,
        }
    }

    pub fn tagged(mut self, tag: Source) -> Self {
        self.tag = tag;
        self
    }

    pub fn cache(&self) -> &MatrixCache {
        &self.cache
    }

    pub fn in_group(&self) -> Result<Vec<BiasFinding>> {
        self.evaluate(&in_group_candidates(self.corpus))
    }

    pub fn cross(&self) -> Result<Vec<BiasFinding>> {
        self.evaluate(&cross_candidates(self.corpus))
    }

    /// Tests every candidate then applies Holm over the whole list.
    pub fn evaluate(&self, candidates: &[Candidate]) -> Result<Vec<BiasFinding>> {
        let one = |c: &Candidate| self.test_one(&c.0, c.1.as_ref());
        let raw: Vec<BiasFinding> = if self.config.parallel {
            parallel_map(candidates, one)?
        } else {
            candidates.iter().map(one).collect::<Result<_>>()?
        };
        let findings = adjust(raw, self.config.alpha)?;
        tracing::info!(
            candidates = findings.len(),
            significant = findings.iter().filter(|f| f.significant).count(),
            "sweep finished"
        );
        Ok(findings)
    }

    fn test_one(&self, ann: &GroupSelector, tgt: Option<&GroupSelector>) -> Result<BiasFinding> {
        let matrix = self.cache.get_or_build(self.corpus, ann, tgt)?;
        let p_raw = if matrix.n_pairs() == 0 {
            1.0
        } else {
            mann_whitney_counts(matrix.row_sums(), matrix.col_sums())?.p_value
        };
        Ok(BiasFinding {
            ann_sel: ann.clone(),
            tgt_sel: tgt.cloned(),
            matrix,
            indicators: BiasIndicators::of(&matrix),
            p_raw,
            p_adjusted: p_raw,
            significant: false,
            low_power: matrix.n_pairs() < self.config.min_pairs,
            corpus_tag: self.tag,
        })
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<F>(candidates: &[Candidate], f: F) -> Result<Vec<BiasFinding>>
where
    F: Fn(&Candidate) -> Result<BiasFinding> + Sync + Send,
{
    use rayon::prelude::*;
    candidates.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<F>(candidates: &[Candidate], f: F) -> Result<Vec<BiasFinding>>
where
    F: Fn(&Candidate) -> Result<BiasFinding>,
{
    candidates.iter().map(f).collect()
}

/// Fill in Holm-adjusted p-values and the strict gate for one family.
fn adjust(mut findings: Vec<BiasFinding>, alpha: f64) -> Result<Vec<BiasFinding>> {
    let raw: Vec<f64> = findings.iter().map(|f| f.p_raw).collect();
    let holm = holm_bonferroni(&raw, alpha)?;
    for (f, p) in findings.iter_mut().zip(holm.adjusted) {
        f.p_adjusted = p;
        f.significant = is_significant(p, alpha);
    }
    Ok(findings)
}

/// Holm-adjust a whole family and keep only the significant findings.
pub fn significance_gate(findings: Vec<BiasFinding>, alpha: f64) -> Result<Vec<BiasFinding>> {
    Ok(adjust(findings, alpha)?.into_iter().filter(|f| f.significant).collect())
}

pub fn run_in_group(corpus: &Corpus, config: &AuditConfig) -> Result<Vec<BiasFinding>> {
    Audit::new(corpus, config.clone()).in_group()
}

pub fn run_cross(corpus: &Corpus, config: &AuditConfig) -> Result<Vec<BiasFinding>> {
    Audit::new(corpus, config.clone()).cross()
}

/// Checks that every LLM record has a human counterpart with the same post,
/// annotator and attributes.
pub fn check_mirror(llm: &Corpus, human: &Corpus) -> Result<()> {
    let by_id: BTreeMap<&str, usize> = human
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.as_str(), i))
        .collect();
    for r in llm.records() {
        if r.source != Source::Llm {
            return Err(Error::Mirror(format!("record `{}` is not tagged as llm", r.record_id)));
        }
        let Some(&i) = by_id.get(r.record_id.as_str()) else {
            return Err(Error::Mirror(format!("record `{}` has no human counterpart", r.record_id)));
        };
        let h = &human.records()[i];
        if h.post_id != r.post_id
            || h.annotator_id != r.annotator_id
            || h.annotator_attrs != r.annotator_attrs
            || h.target_attrs != r.target_attrs
        {
            return Err(Error::Mirror(format!(
                "record `{}` differs from its human counterpart beyond the label",
                r.record_id
            )));
        }
    }
    Ok(())
}

/// Cross sweep on an LLM-labelled mirror of `human`.
pub fn run_llm_cross(llm: &Corpus, human: &Corpus, config: &AuditConfig) -> Result<Vec<BiasFinding>> {
    check_mirror(llm, human)?;
    Audit::new(llm, config.clone()).tagged(Source::Llm).cross()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub ann_sel: GroupSelector,
    pub tgt_sel: Option<GroupSelector>,
    pub human: BiasIndicators,
    pub llm: BiasIndicators,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub records: Vec<ComparisonRecord>,
    /// `None` when the matched values have no variance or fewer than two
    /// records carry a value for the metric.
    pub r_intensity: Option<f64>,
    pub r_prevalence: Option<f64>,
    pub r_kappa: Option<f64>,
}

/// Inner join of the significant findings on both sides, with Pearson r per
/// indicator.
pub fn compare_biases(human: &[BiasFinding], llm: &[BiasFinding]) -> Result<Comparison> {
    let llm_sig: BTreeMap<_, &BiasFinding> =
        llm.iter().filter(|f| f.significant).map(|f| (f.key(), f)).collect();
    let records: Vec<ComparisonRecord> = human
        .iter()
        .filter(|f| f.significant)
        .filter_map(|h| {
            llm_sig.get(&h.key()).map(|l| ComparisonRecord {
                ann_sel: h.ann_sel.clone(),
                tgt_sel: h.tgt_sel.clone(),
                human: h.indicators,
                llm: l.indicators,
            })
        })
        .collect();
    if records.len() < 2 {
        return Err(Error::Undefined(format!(
            "correlation needs at least two matched findings, found {}",
            records.len()
        )));
    }
    let r = |get: fn(&BiasIndicators) -> Option<f64>| {
        let (x, y): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter_map(|c| Some((get(&c.human)?, get(&c.llm)?)))
            .unzip();
        pearson(&x, &y).ok()
    };
    Ok(Comparison {
        r_intensity: r(|b| b.intensity),
        r_prevalence: r(|b| b.prevalence),
        r_kappa: r(|b| b.kappa),
        records,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use super::*;
    use crate::corpus::{AnnotationRecord, AttrMap, AttributeSchema, Label};

    fn rec(id: usize, post: usize, gender: &str, tgt_gender: &str, label: Label) -> AnnotationRecord {
        let mut a = AttrMap::new();
        a.insert(AttributeKey::Gender, BTreeSet::from([gender.to_string()]));
        let mut t = AttrMap::new();
        t.insert(AttributeKey::Gender, BTreeSet::from([tgt_gender.to_string()]));
        AnnotationRecord {
            record_id: id.to_string(),
            post_id: format!("p{post}"),
            text_fingerprint: String::new(),
            annotator_id: format!("a{id}"),
            label,
            annotator_attrs: a,
            target_attrs: t,
            source: Source::Human,
        }
    }

    /// Women rate posts about women as hate, men rate them non-hate.
    fn biased() -> Corpus {
        let mut v = Vec::new();
        for p in 0..60 {
            v.push(rec(2 * p, p, "women", "women", Label::Hate));
            v.push(rec(2 * p + 1, p, "men", "women", Label::NonHate));
        }
        Corpus::new(v, Arc::new(AttributeSchema::mhs_default())).unwrap()
    }

    #[test]
    fn empty_schema_family_is_empty() {
        let schema = AttributeSchema::from_toml_str("[values]\n", "").unwrap();
        let c = Corpus::empty(Arc::new(schema));
        assert!(run_in_group(&c, &AuditConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn in_group_family_has_29_candidates() {
        let c = biased();
        assert_eq!(in_group_candidates(&c).len(), 29);
    }

    #[test]
    fn injected_pair_is_found() {
        let c = biased();
        let found = run_in_group(&c, &AuditConfig::default()).unwrap();
        let f = found
            .iter()
            .find(|f| f.ann_sel.value == "women" && f.ann_sel.key == AttributeKey::Gender)
            .unwrap();
        assert!(f.significant);
        assert_eq!(f.indicators.intensity, Some(1.0));
        assert_eq!(f.matrix.n_pairs(), 60);
        assert!(!f.low_power);
        assert_eq!(found.iter().filter(|f| f.significant).count(), 1);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let c = biased();
        let par = run_cross(&c, &AuditConfig::default()).unwrap();
        let seq = run_cross(&c, &AuditConfig { parallel: false, ..AuditConfig::default() }).unwrap();
        assert_eq!(par, seq);
        assert_eq!(par.len(), 1950);
    }

    #[test]
    fn in_group_candidates_are_the_diagonal_of_cross() {
        let c = biased();
        let cross: BTreeSet<Candidate> = cross_candidates(&c).into_iter().collect();
        let diag: BTreeSet<Candidate> = cross
            .iter()
            .filter(|(a, t)| {
                let t = t.as_ref().unwrap();
                AttributeKey::SHARED.contains(&a.key) && a.key == t.key && a.value == t.value
            })
            .cloned()
            .collect();
        let inner: BTreeSet<Candidate> = in_group_candidates(&c).into_iter().collect();
        assert_eq!(diag, inner);
    }

    #[test]
    fn single_post_is_never_significant() {
        let v = vec![
            rec(0, 0, "women", "women", Label::Hate),
            rec(1, 0, "men", "women", Label::NonHate),
        ];
        let c = Corpus::new(v, Arc::new(AttributeSchema::mhs_default())).unwrap();
        let found = run_cross(&c, &AuditConfig::default()).unwrap();
        assert!(found.iter().all(|f| !f.significant && f.matrix.n_pairs() <= 1));
        assert!(found.iter().any(|f| f.low_power && f.matrix.n_pairs() == 1));
    }

    #[test]
    fn llm_identical_labels_give_identical_findings() {
        let human = biased();
        let labels = human.records().iter().map(|r| (r.record_id.clone(), r.label)).collect();
        let llm = human.with_labels(&labels).unwrap();
        let cfg = AuditConfig::default();
        let h = run_cross(&human, &cfg).unwrap();
        let l = run_llm_cross(&llm, &human, &cfg).unwrap();
        assert_eq!(h.len(), l.len());
        for (a, b) in h.iter().zip(&l) {
            assert_eq!((&a.matrix, a.p_adjusted, a.significant), (&b.matrix, b.p_adjusted, b.significant));
            assert_eq!(b.corpus_tag, Source::Llm);
        }
    }

    #[test]
    fn mirror_violation_is_reported() {
        let human = biased();
        let mut recs = human.records().to_vec();
        for r in &mut recs {
            r.source = Source::Llm;
        }
        recs[0].record_id = "ghost".into();
        let llm = Corpus::new(recs, human.schema_arc()).unwrap();
        assert!(matches!(
            run_llm_cross(&llm, &human, &AuditConfig::default()),
            Err(Error::Mirror(_))
        ));
    }

    fn finding(value: &str, i: f64, p: f64, k: f64, significant: bool) -> BiasFinding {
        BiasFinding {
            ann_sel: GroupSelector::annotator(AttributeKey::Gender, value),
            tgt_sel: Some(GroupSelector::target(AttributeKey::Race, "black")),
            matrix: ConfusionMatrix::default(),
            indicators: BiasIndicators {
                intensity: Some(i),
                prevalence: Some(p),
                kappa: Some(k),
                n_pairs: 0,
            },
            p_raw: 0.0,
            p_adjusted: 0.0,
            significant,
            low_power: false,
            corpus_tag: Source::Human,
        }
    }

    #[test]
    fn self_comparison_correlates_perfectly() {
        let h = vec![
            finding("women", 0.5, 0.2, 0.3, true),
            finding("men", -0.1, 0.4, 0.1, true),
            finding("non binary", 0.9, 0.3, 0.6, true),
        ];
        let c = compare_biases(&h, &h).unwrap();
        assert_eq!(c.records.len(), 3);
        for r in [c.r_intensity, c.r_prevalence, c.r_kappa] {
            assert!((r.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_significant_sets_cannot_correlate() {
        let h = vec![finding("women", 0.5, 0.2, 0.3, true), finding("men", 0.1, 0.2, 0.3, false)];
        let l = vec![finding("women", 0.5, 0.2, 0.3, false), finding("men", 0.1, 0.2, 0.3, true)];
        assert!(matches!(compare_biases(&h, &l), Err(Error::Undefined(_))));
    }

    #[test]
    fn comparison_is_symmetric() {
        let h = vec![
            finding("women", 0.5, 0.2, 0.3, true),
            finding("men", -0.1, 0.4, 0.1, true),
            finding("non binary", 0.9, 0.3, 0.6, true),
        ];
        let l = vec![
            finding("women", 0.1, 0.5, 0.2, true),
            finding("men", 0.3, 0.1, 0.4, true),
            finding("non binary", -0.2, 0.2, 0.9, true),
        ];
        let a = compare_biases(&h, &l).unwrap();
        let b = compare_biases(&l, &h).unwrap();
        assert_eq!(a.r_intensity, b.r_intensity);
        assert_eq!(a.r_prevalence, b.r_prevalence);
        assert_eq!(a.r_kappa, b.r_kappa);
    }

    #[test]
    fn gate_keeps_single_small_p() {
        let mut f = finding("women", 0.5, 0.2, 0.3, false);
        f.p_raw = 0.05;
        assert_eq!(significance_gate(vec![f], 0.1).unwrap().len(), 1);
        assert!(significance_gate(vec![], 0.1).unwrap().is_empty());
    }
}

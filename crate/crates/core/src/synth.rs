//! Synthetic corpora with a known injected bias, and brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    text_fingerprint, AnnotationRecord, AttrMap, AttributeKey, AttributeSchema, Corpus, Label, Side, Source,
};
use crate::error::{Error, Result};
use crate::pairing::{ConfusionMatrix, GroupSelector};

/// Record limit for [`brute_force_matrix`].
pub const BRUTE_FORCE_LIMIT: usize = 10_000;
/// Pooled size limit for [`exact_mwu_p`].
pub const EXACT_LIMIT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Over,
    Under,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub ann_key: AttributeKey,
    pub ann_value: String,
    pub tgt_key: AttributeKey,
    pub tgt_value: String,
    pub direction: Direction,
    pub shift_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_posts: usize,
    pub annotators_per_post: usize,
    /// Size of the annotator pool posts draw from.
    pub n_annotators: usize,
    /// Share of annotators holding the injected annotator value.
    pub group_fraction: f64,
    /// Share of posts aimed at the injected target value.
    pub target_fraction: f64,
    /// Chance an annotator ignores the post's base label and draws afresh.
    pub label_noise: f64,
    /// Values per attribute in the generated vocabulary.
    pub values_per_key: usize,
    pub injected: Injection,
    pub base_label_distribution: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_posts: 500,
            annotators_per_post: 4,
            n_annotators: 200,
            group_fraction: 0.3,
            target_fraction: 0.5,
            label_noise: 0.3,
            values_per_key: 3,
            injected: Injection {
                ann_key: AttributeKey::Gender,
                ann_value: "women".into(),
                tgt_key: AttributeKey::Race,
                tgt_value: "black".into(),
                direction: Direction::Over,
                shift_probability: 0.5,
            },
            base_label_distribution: [0.5, 0.2, 0.3],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(s: &str, name: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(s).map_err(|e| Error::Config {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("synth config: {m}")));
        for (name, p) in [
            ("group_fraction", self.group_fraction),
            ("target_fraction", self.target_fraction),
            ("label_noise", self.label_noise),
            ("shift_probability", self.injected.shift_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        let d = self.base_label_distribution;
        if d.iter().any(|p| !(0.0..=1.0).contains(p)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("base_label_distribution {d:?} does not sum to 1"));
        }
        if self.annotators_per_post == 0 || self.n_annotators == 0 {
            return bad("no annotators".into());
        }
        if self.annotators_per_post > self.n_annotators {
            return bad(format!(
                "{} annotators per post but a pool of {}",
                self.annotators_per_post, self.n_annotators
            ));
        }
        if self.values_per_key < 2 {
            return bad("values_per_key must be at least 2".into());
        }
        if !self.injected.ann_key.annotator_side() || !self.injected.tgt_key.target_side() {
            return bad("injected keys must exist on their sides".into());
        }
        if self.injected.ann_key == self.injected.tgt_key
            && self.injected.ann_value != self.injected.tgt_value
            && self.values_per_key < 3
        {
            return bad("values_per_key too small for two injected values on one key".into());
        }
        Ok(())
    }

    /// Vocabulary restricted to the two injected keys.
    pub fn schema(&self) -> Result<AttributeSchema> {
        let inj = &self.injected;
        let mut vocab: BTreeMap<AttributeKey, Vec<String>> = BTreeMap::new();
        vocab.entry(inj.ann_key).or_default().push(inj.ann_value.clone());
        let tgt = vocab.entry(inj.tgt_key).or_default();
        if !tgt.contains(&inj.tgt_value) {
            tgt.push(inj.tgt_value.clone());
        }
        let full = AttributeSchema::mhs_default();
        for (key, vals) in vocab.iter_mut() {
            let mut fill = full
                .allowed_values(*key)
                .iter()
                .filter(|v| v.as_str() != "other")
                .cloned()
                .chain((1..).map(|i| format!("value {i}")));
            while vals.len() < self.values_per_key {
                let v = fill.next().expect("infinite filler");
                if !vals.contains(&v) {
                    vals.push(v);
                }
            }
        }
        AttributeSchema::new(vocab, [])
    }
}

fn draw_label(rng: &mut ChaCha8Rng, dist: &[f64; 3]) -> Label {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return Label::from_ordinal(i as u8).expect("ordinal");
        }
    }
    Label::Hate
}

fn draw_other<'a>(rng: &mut ChaCha8Rng, values: &'a [String], not: &str) -> &'a str {
    let rest: Vec<&String> = values.iter().filter(|v| v.as_str() != not).collect();
    rest[rng.random_range(0..rest.len())]
}

fn shift(label: Label, direction: Direction) -> Label {
    let o = label.ordinal();
    let o = match direction {
        Direction::Over => (o + 1).min(2),
        Direction::Under => o.saturating_sub(1),
    };
    Label::from_ordinal(o).expect("ordinal")
}

/// Deterministic corpus for `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let schema = Arc::new(config.schema()?);
    let inj = &config.injected;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let ann_values = schema.allowed_values(inj.ann_key);
    let tgt_values = schema.allowed_values(inj.tgt_key);
    let annotators: Vec<String> = (0..config.n_annotators)
        .map(|_| {
            if rng.random::<f64>() < config.group_fraction {
                inj.ann_value.clone()
            } else {
                draw_other(&mut rng, ann_values, &inj.ann_value).to_string()
            }
        })
        .collect();

    let mut records = Vec::with_capacity(config.n_posts * config.annotators_per_post);
    for post in 0..config.n_posts {
        let targeted = rng.random::<f64>() < config.target_fraction;
        let target = if targeted {
            inj.tgt_value.clone()
        } else {
            draw_other(&mut rng, tgt_values, &inj.tgt_value).to_string()
        };
        let base = draw_label(&mut rng, &config.base_label_distribution);
        let fingerprint = text_fingerprint(&format!("synthetic post {post}"));
        for (k, a) in index::sample(&mut rng, config.n_annotators, config.annotators_per_post)
            .into_iter()
            .enumerate()
        {
            let mut label = if rng.random::<f64>() < config.label_noise {
                draw_label(&mut rng, &config.base_label_distribution)
            } else {
                base
            };
            let in_group = annotators[a] == inj.ann_value;
            if targeted && in_group && rng.random::<f64>() < inj.shift_probability {
                label = shift(label, inj.direction);
            }
            let mut annotator_attrs = AttrMap::new();
            annotator_attrs.insert(inj.ann_key, BTreeSet::from([annotators[a].clone()]));
            let mut target_attrs = AttrMap::new();
            target_attrs.insert(inj.tgt_key, BTreeSet::from([target.clone()]));
            records.push(AnnotationRecord {
                record_id: format!("r{post}_{k}"),
                post_id: format!("p{post}"),
                text_fingerprint: fingerprint.clone(),
                annotator_id: format!("a{a}"),
                label,
                annotator_attrs,
                target_attrs,
                source: Source::Human,
            });
        }
    }
    Corpus::new(records, schema)
}

/// Nested-loop pair count over every ordered record pair.
pub fn brute_force_matrix(
    corpus: &Corpus,
    ann_sel: &GroupSelector,
    tgt_sel: Option<&GroupSelector>,
) -> Result<ConfusionMatrix> {
    if corpus.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "brute force limited to {BRUTE_FORCE_LIMIT} records, corpus has {}",
            corpus.len()
        )));
    }
    if ann_sel.side != Side::Annotator || ann_sel.negated {
        return Err(Error::Selector(format!("{ann_sel} is not a plain annotator selector")));
    }
    let out_sel = ann_sel.clone().negate();
    let mut m = ConfusionMatrix::default();
    let recs = corpus.records();
    for (i, c) in recs.iter().enumerate() {
        if !ann_sel.matches(c) || !tgt_sel.is_none_or(|t| t.matches(c)) {
            continue;
        }
        for (j, o) in recs.iter().enumerate() {
            if i != j && o.post_id == c.post_id && out_sel.matches(o) {
                m.counts[c.label.ordinal() as usize][o.label.ordinal() as usize] += 1;
            }
        }
    }
    Ok(m)
}

/// Two-sided exact Mann-Whitney p by enumerating every split of the pooled
/// sample, counting `U` pairwise for each split.
pub fn exact_mwu_p(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() + y.len();
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("exact_mwu_p: empty sample".into()));
    }
    if n > EXACT_LIMIT {
        return Err(Error::InvalidInput(format!("exact_mwu_p: {n} observations exceed {EXACT_LIMIT}")));
    }
    // twice U, kept integral
    let two_u = |a: &[f64], b: &[f64]| -> i64 {
        let mut s = 0;
        for p in a {
            for q in b {
                s += if p > q { 2 } else if p == q { 1 } else { 0 };
            }
        }
        s
    };
    let centre = (x.len() * y.len()) as i64; // twice the mean
    let observed = (two_u(x, y) - centre).abs();
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (mut hits, mut total) = (0u64, 0u64);
    let mut pick = Vec::with_capacity(x.len());
    let mut rest = Vec::with_capacity(y.len());
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        pick.clear();
        rest.clear();
        for (i, &v) in pooled.iter().enumerate() {
            if mask >> i & 1 == 1 {
                pick.push(v);
            } else {
                rest.push(v);
            }
        }
        total += 1;
        if (two_u(&pick, &rest) - centre).abs() >= observed {
            hits += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

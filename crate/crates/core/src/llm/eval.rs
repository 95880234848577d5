use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::error::{Error, Result};
use crate::metrics::cohen_kappa;
use crate::pairing::ConfusionMatrix;

/// Per-post human majority label; ties resolve to `maybe`.
pub fn majority_reference(corpus: &Corpus) -> BTreeMap<String, Label> {
    corpus
        .index()
        .iter()
        .map(|(post, idx)| {
            let mut h = [0usize; 3];
            for &i in idx {
                h[corpus.records()[i].label.ordinal() as usize] += 1;
            }
            let top = *h.iter().max().expect("three classes");
            let winners: Vec<usize> = (0..3).filter(|&k| h[k] == top).collect();
            let label = if winners.len() == 1 {
                Label::from_ordinal(winners[0] as u8).expect("ordinal")
            } else {
                Label::Maybe
            };
            (post.clone(), label)
        })
        .collect()
}

/// Posts whose human labels are not unanimous.
pub fn disagreement_posts(corpus: &Corpus) -> BTreeSet<String> {
    corpus
        .index()
        .iter()
        .filter(|(_, idx)| {
            let labels: BTreeSet<Label> = idx.iter().map(|&i| corpus.records()[i].label).collect();
            labels.len() >= 2
        })
        .map(|(p, _)| p.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub n: usize,
}

/// Three-class scores over posts present in both maps. F1 of a class with no
/// predictions and no support counts as 0.
pub fn classification_scores(
    reference: &BTreeMap<String, Label>,
    predicted: &BTreeMap<String, Label>,
) -> Result<ClassificationScores> {
    let mut m = ConfusionMatrix::default();
    for (post, &truth) in reference {
        if let Some(&p) = predicted.get(post) {
            m.counts[truth.ordinal() as usize][p.ordinal() as usize] += 1;
        }
    }
    let n = m.n_pairs();
    if n == 0 {
        return Err(Error::Undefined("no post has both a reference and a predicted label".into()));
    }
    let support = m.row_sums();
    let predicted_n = m.col_sums();
    let mut f1 = [0.0; 3];
    for k in 0..3 {
        let tp = m.counts[k][k] as f64;
        let denom = (support[k] + predicted_n[k]) as f64;
        if denom > 0.0 {
            f1[k] = 2.0 * tp / denom;
        }
    }
    Ok(ClassificationScores {
        macro_f1: f1.iter().sum::<f64>() / 3.0,
        weighted_f1: (0..3).map(|k| f1[k] * support[k] as f64).sum::<f64>() / n as f64,
        accuracy: m.diagonal() as f64 / n as f64,
        n: n as usize,
    })
}

/// Cohen's κ between persona-conditioned labels and the base label of their
/// post, over the given posts. Perfect agreement gives 1 even when only one
/// class occurs.
pub fn personalization_sensitivity<'a>(
    base: &BTreeMap<String, Label>,
    persona: impl IntoIterator<Item = (&'a str, Label)>,
    posts: &BTreeSet<String>,
) -> Result<f64> {
    if posts.is_empty() {
        return Err(Error::Undefined("empty disagreement set".into()));
    }
    let mut m = ConfusionMatrix::default();
    for (post, label) in persona {
        if !posts.contains(post) {
            continue;
        }
        if let Some(&b) = base.get(post) {
            m.counts[label.ordinal() as usize][b.ordinal() as usize] += 1;
        }
    }
    if m.n_pairs() == 0 {
        return Err(Error::Undefined("no persona label falls on a disagreement post".into()));
    }
    Ok(match cohen_kappa(&m) {
        Some(k) => k,
        None if m.diagonal() == m.n_pairs() => 1.0,
        None => 0.0,
    })
}

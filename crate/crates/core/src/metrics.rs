//! Intensity, prevalence and agreement on a cross-group matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::ConfusionMatrix;

/// Signed balance of disagreements: +1 when the in-group is always the more
/// hateful side, −1 when it is always the less hateful one. `None` when the
/// two groups never disagree.
pub fn intensity(m: &ConfusionMatrix) -> Option<f64> {
    let lower = m.lower() as f64;
    let upper = m.upper() as f64;
    if lower + upper == 0.0 {
        None
    } else {
        Some((lower - upper) / (lower + upper))
    }
}

/// Fraction of pairs that disagree.
pub fn prevalence(m: &ConfusionMatrix) -> Result<f64> {
    let n = m.n_pairs();
    if n == 0 {
        return Err(Error::Undefined("prevalence of an empty matrix".into()));
    }
    Ok((n - m.diagonal()) as f64 / n as f64)
}

/// Unweighted Cohen's kappa. `None` when chance agreement is certain
/// (or the matrix is empty).
pub fn cohen_kappa(m: &ConfusionMatrix) -> Option<f64> {
    let n = m.n_pairs();
    if n == 0 {
        return None;
    }
    let rows = m.row_sums();
    let cols = m.col_sums();
    // integer form of p_e == 1
    let chance: u128 = rows.iter().zip(&cols).map(|(&r, &c)| r as u128 * c as u128).sum();
    let n2 = n as u128 * n as u128;
    if chance == n2 {
        return None;
    }
    let n = n as f64;
    let po = m.diagonal() as f64 / n;
    let pe = chance as f64 / (n * n);
    Some((po - pe) / (1.0 - pe))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "pearson: length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Undefined("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson: zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasIndicators {
    pub intensity: Option<f64>,
    pub prevalence: Option<f64>,
    pub kappa: Option<f64>,
    pub n_pairs: u64,
}

impl BiasIndicators {
    pub fn of(m: &ConfusionMatrix) -> Self {
        BiasIndicators {
            intensity: intensity(m),
            prevalence: prevalence(m).ok(),
            kappa: cohen_kappa(m),
            n_pairs: m.n_pairs(),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn worked_matrix() {
        let m = ConfusionMatrix::new([[10, 2, 1], [3, 8, 0], [4, 1, 9]]);
        assert!(close(intensity(&m).unwrap(), 5.0 / 11.0));
        assert!(close(prevalence(&m).unwrap(), 11.0 / 38.0));
        // p_o = 27/38, p_e = (13·17 + 11·11 + 14·10)/38²
        let pe = (13.0 * 17.0 + 11.0 * 11.0 + 14.0 * 10.0) / (38.0 * 38.0);
        let po = 27.0 / 38.0;
        assert!(close(cohen_kappa(&m).unwrap(), (po - pe) / (1.0 - pe)));
    }

    #[test]
    fn diagonal_only() {
        let m = ConfusionMatrix::new([[5, 0, 0], [0, 3, 0], [0, 0, 2]]);
        assert_eq!(intensity(&m), None);
        assert_eq!(prevalence(&m).unwrap(), 0.0);
        assert!(close(cohen_kappa(&m).unwrap(), 1.0));
    }

    #[test]
    fn all_lower() {
        let m = ConfusionMatrix::new([[0, 0, 0], [4, 0, 0], [1, 2, 0]]);
        assert_eq!(intensity(&m), Some(1.0));
        assert_eq!(prevalence(&m).unwrap(), 1.0);
    }

    #[test]
    fn single_cell_has_undefined_kappa() {
        let m = ConfusionMatrix::new([[7, 0, 0], [0, 0, 0], [0, 0, 0]]);
        assert_eq!(cohen_kappa(&m), None);
    }

    #[test]
    fn empty_matrix() {
        let m = ConfusionMatrix::default();
        assert!(prevalence(&m).is_err());
        assert_eq!(intensity(&m), None);
        assert_eq!(cohen_kappa(&m), None);
        assert_eq!(BiasIndicators::of(&m), BiasIndicators::default());
    }

    #[test]
    fn pearson_cases() {
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0));
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0));
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        prop::array::uniform3(prop::array::uniform3(0u64..50)).prop_map(ConfusionMatrix::new)
    }

    proptest! {
        #[test]
        fn ranges(m in matrix()) {
            if let Some(i) = intensity(&m) {
                prop_assert!((-1.0..=1.0).contains(&i));
            }
            if let Ok(p) = prevalence(&m) {
                prop_assert!((0.0..=1.0).contains(&p));
            }
            if let Some(k) = cohen_kappa(&m) {
                prop_assert!(k <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn transpose_flips_intensity_only(m in matrix()) {
            let t = m.transpose();
            match (intensity(&m), intensity(&t)) {
                (Some(a), Some(b)) => prop_assert!(close(a, -b)),
                (a, b) => prop_assert_eq!(a, b),
            }
            prop_assert_eq!(prevalence(&m).ok(), prevalence(&t).ok());
            match (cohen_kappa(&m), cohen_kappa(&t)) {
                (Some(a), Some(b)) => prop_assert!(close(a, b)),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn scale_invariant(m in matrix(), k in 1u64..20) {
            let s = m.scaled(k);
            let (a, b) = (BiasIndicators::of(&m), BiasIndicators::of(&s));
            for (x, y) in [(a.intensity, b.intensity), (a.prevalence, b.prevalence), (a.kappa, b.kappa)] {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }

        #[test]
        fn pearson_bounded(xs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}

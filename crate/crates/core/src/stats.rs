//! Mann-Whitney U and Holm step-down correction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest pooled sample size accepted by [`Method::Exact`].
pub const MAX_EXACT_N: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Normal approximation, tie-corrected variance, continuity correction.
    #[default]
    Normal,
    /// Full enumeration of group assignments over midranks.
    Exact,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Normal => "normal",
            Method::Exact => "exact",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Method::Normal),
            "exact" => Ok(Method::Exact),
            other => Err(Error::InvalidInput(format!("unknown test method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `U` for the first sample: pairs with `x > y` plus half the ties.
    pub statistic: f64,
    /// Two-sided, in `(0, 1]`.
    pub p_value: f64,
    pub n_x: u64,
    pub n_y: u64,
    pub method: Method,
}

fn finite(xs: &[f64], name: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidInput(format!("mann-whitney: sample {name} is empty")));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("mann-whitney: sample {name} has a non-finite value")));
    }
    Ok(())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Two-sided p from `U`, sizes and the tie term `Σ(t³ − t)`.
fn normal_p(u: f64, nx: f64, ny: f64, tie_term: f64) -> f64 {
    let n = nx + ny;
    let var = nx * ny / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 || !var.is_finite() {
        return 1.0;
    }
    let z = ((u - nx * ny / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    clamp_p(erfc(z / std::f64::consts::SQRT_2))
}

/// Pooled midranks, sorted order; returns ranks aligned with the input
/// (x first, then y) and the tie term.
fn midranks(x: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

pub fn mann_whitney(x: &[f64], y: &[f64], method: Method) -> Result<TestResult> {
    finite(x, "x")?;
    finite(y, "y")?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (ranks, tie_term) = midranks(x, y);
    let rank_sum: f64 = ranks[..x.len()].iter().sum();
    let u = rank_sum - nx * (nx + 1.0) / 2.0;
    let p_value = match method {
        Method::Normal => normal_p(u, nx, ny, tie_term),
        Method::Exact => exact_p(&ranks, x.len(), u)?,
    };
    Ok(TestResult {
        statistic: u,
        p_value,
        n_x: x.len() as u64,
        n_y: y.len() as u64,
        method,
    })
}

/// Share of assignments whose `U` lies at least as far from its mean as the
/// observed one.
fn exact_p(ranks: &[f64], nx: usize, u_obs: f64) -> Result<f64> {
    let n = ranks.len();
    if n > MAX_EXACT_N {
        return Err(Error::InvalidInput(format!(
            "exact mann-whitney supports at most {MAX_EXACT_N} observations, got {n}"
        )));
    }
    let ny = n - nx;
    let mean = nx as f64 * ny as f64 / 2.0;
    let offset = nx as f64 * (nx as f64 + 1.0) / 2.0;
    let observed = (u_obs - mean).abs() - 1e-9;
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != nx {
            continue;
        }
        let sum: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        total += 1;
        if (sum - offset - mean).abs() >= observed {
            hits += 1;
        }
    }
    Ok(clamp_p(hits as f64 / total as f64))
}

/// Normal-approximation test on two ordinal samples given as label histograms.
pub fn mann_whitney_counts(hx: [u64; 3], hy: [u64; 3]) -> Result<TestResult> {
    let nx: u64 = hx.iter().sum();
    let ny: u64 = hy.iter().sum();
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidInput("mann-whitney: empty sample".into()));
    }
    let mut u = 0.0;
    let mut below = 0.0;
    let mut tie_term = 0.0;
    for k in 0..3 {
        let (a, b) = (hx[k] as f64, hy[k] as f64);
        u += a * (below + 0.5 * b);
        below += b;
        let t = a + b;
        tie_term += t * t * t - t;
    }
    Ok(TestResult {
        statistic: u,
        p_value: normal_p(u, nx as f64, ny as f64, tie_term),
        n_x: nx,
        n_y: ny,
        method: Method::Normal,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Holm {
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<Holm> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(scaled);
        adjusted[i] = running;
    }
    let rejected = adjusted.iter().map(|&p| p <= alpha).collect();
    Ok(Holm { adjusted, rejected })
}

/// Strict gate used for reported findings.
pub fn is_significant(p_adjusted: f64, alpha: f64) -> bool {
    p_adjusted < alpha
}

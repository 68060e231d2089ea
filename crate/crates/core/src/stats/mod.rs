//! Rank statistics for cohort analysis.
//!
//! Quantiles use the inclusive linear-interpolation rule: for sorted
//! `x[0..n]` and probability `p`, `h = (n − 1)·p`, and the quantile is
//! `x[⌊h⌋] + (h − ⌊h⌋)·(x[⌊h⌋+1] − x[⌊h⌋])`. IQR is `Q3 − Q1`.

mod cohort;
mod report;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::rng::RngStream;

pub use cohort::{build_cohort, build_cohort_from_logs, CohortError, CohortRow, CohortTable, Column, ProjectedValue};
pub use report::{experiment_reports, AnalysisConfig, AnalysisReport, CorrelationCell, Notice, WilcoxonRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("correlation undefined: {0} is constant")]
    Constant(&'static str),
    #[error("non-finite sample value")]
    NonFinite,
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Quantile of already sorted data (inclusive linear interpolation).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75));
    Some(Summary { n: v.len(), median: quantile_sorted(&v, 0.5), q1, q3, iqr: q3 - q1 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Approx,
    Permutation,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// min(W+, W−)
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: Method,
    pub x: Option<Summary>,
    pub y: Option<Summary>,
}

/// Largest nonzero-difference count still tested by full enumeration.
pub const EXACT_LIMIT: usize = 20;

/// Paired signed-rank test on `d = y − x`, two-sided.
pub fn wilcoxon_paired(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).filter(|d| *d != 0.0).collect();
    let (sx, sy) = (summarize(x), summarize(y));
    let n = d.len();
    if n == 0 {
        return Ok(TestResult { statistic: 0.0, w_plus: 0.0, w_minus: 0.0, p_value: 1.0, n_effective: 0, method: Method::Degenerate, x: sx, y: sy });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum::<f64>() + 0.0;
    let w_minus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).map(|(_, r)| r).sum::<f64>() + 0.0;
    let w = w_plus.min(w_minus);
    let (p, method) = if n <= EXACT_LIMIT {
        (exact_signed_rank_p(&ranks, w), Method::Exact)
    } else {
        (normal_signed_rank_p(&abs, w), Method::Approx)
    };
    Ok(TestResult { statistic: w, w_plus, w_minus, p_value: p, n_effective: n, method, x: sx, y: sy })
}

/// Two-sided exact p: `2·P(T ≤ w)` under the null, where T is the sum of a
/// uniformly random subset of the ranks. Mid-ranks are half-integers, so
/// the distribution is counted over doubled ranks.
pub fn exact_signed_rank_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (w * 2.0).round() as usize;
    let below: u64 = counts[..=limit.min(total)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * below as f64 / all).min(1.0)
}

fn normal_signed_rank_p(abs: &[f64], w: f64) -> f64 {
    let n = abs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w - mean + 0.5).min(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.cdf(z)).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Weak,
    Moderate,
    Strong,
}

impl Strength {
    pub fn of(rho: f64) -> Self {
        match rho.abs() {
            a if a >= 0.7 => Strength::Strong,
            a if a >= 0.5 => Strength::Moderate,
            _ => Strength::Weak,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strength::Weak => "weak",
            Strength::Moderate => "moderate",
            Strength::Strong => "strong",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpearmanPMethod {
    Permutation { permutations: usize, seed: u64 },
    TApprox,
}

impl Default for SpearmanPMethod {
    fn default() -> Self {
        SpearmanPMethod::Permutation { permutations: 10_000, seed: 0x5eed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub strength: Strength,
    pub method: Method,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Rank correlation with tie-corrected mid-ranks.
pub fn spearman(x: &[f64], y: &[f64], method: SpearmanPMethod) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { need: 3, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (rx, ry) = (midranks(x), midranks(y));
    if rx.iter().all(|r| *r == rx[0]) {
        return Err(StatsError::Constant("x"));
    }
    if ry.iter().all(|r| *r == ry[0]) {
        return Err(StatsError::Constant("y"));
    }
    let rho = pearson(&rx, &ry).expect("non-constant ranks");
    let n = x.len();
    let (p_value, m) = match method {
        SpearmanPMethod::Permutation { permutations, seed } => (permutation_p(&rx, &ry, rho, permutations, seed), Method::Permutation),
        SpearmanPMethod::TApprox => {
            let df = (n - 2) as f64;
            let p = if rho.abs() >= 1.0 || df <= 0.0 {
                0.0
            } else {
                let t = rho * (df / (1.0 - rho * rho)).sqrt();
                let dist = StudentsT::new(0.0, 1.0, df).expect("valid t");
                2.0 * (1.0 - dist.cdf(t.abs()))
            };
            (p.clamp(0.0, 1.0), Method::Approx)
        }
    };
    Ok(Correlation { rho, p_value, n, strength: Strength::of(rho), method: m })
}

/// `(1 + #{|ρ*| ≥ |ρ|}) / (1 + permutations)`. Permutation `i` uses its own
/// derived stream, so doubling the count keeps the first half unchanged.
fn permutation_p(rx: &[f64], ry: &[f64], rho: f64, permutations: usize, seed: u64) -> f64 {
    let n = rx.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let cx: Vec<f64> = rx.iter().map(|r| r - mean).collect();
    let cy: Vec<f64> = ry.iter().map(|r| r - mean).collect();
    let norm = (cx.iter().map(|v| v * v).sum::<f64>() * cy.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let base = RngStream::named(seed, "spearman-permutation");
    let target = rho.abs() - 1e-12;
    let mut perm = cy.clone();
    let mut hits = 0usize;
    for i in 0..permutations {
        perm.copy_from_slice(&cy);
        base.derive_u64(i as u64).shuffle(&mut perm);
        let r = cx.iter().zip(&perm).map(|(a, b)| a * b).sum::<f64>() / norm;
        if r.abs() >= target {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (1 + permutations) as f64
}

//! Paired Wilcoxon signed-rank test.

use crate::error::{Error, Result};

/// Largest sample size handled by exact enumeration of sign patterns.
pub const EXACT_MAX_N: usize = 12;
pub const MIN_PAIRS: usize = 5;
const CONTINUITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Number of non-zero differences.
    pub n: usize,
    /// Rank sum of positive differences `a − b`.
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W−)`.
    pub statistic: f64,
    pub p_two_sided: f64,
    /// One-sided p for the alternative "a tends to exceed b".
    pub p_greater: f64,
    /// One-sided p for the alternative "a tends to fall below b".
    pub p_less: f64,
    pub method: PMethod,
}

/// Signed ranks with average ranks for ties, scaled by 2 so they stay integral.
struct SignedRanks {
    doubled: Vec<u64>,
    positive: Vec<bool>,
    tie_sizes: Vec<usize>,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let mut diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Runtime("non-finite paired difference".into()));
    }
    if diffs.is_empty() && !a.is_empty() {
        return Err(Error::DegeneratePairing);
    }
    if diffs.len() < MIN_PAIRS {
        return Err(Error::TooFewPairs { needed: MIN_PAIRS, got: diffs.len() });
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let n = diffs.len();
    let mut doubled = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && diffs[j].abs() == diffs[i].abs() {
            j += 1;
        }
        // Ranks i+1..=j averaged, times two.
        let r = (i + 1 + j) as u64;
        doubled[i..j].fill(r);
        if j - i > 1 {
            tie_sizes.push(j - i);
        }
        i = j;
    }
    let positive = diffs.iter().map(|d| *d > 0.0).collect();
    Ok(SignedRanks { doubled, positive, tie_sizes })
}

impl SignedRanks {
    fn w_plus_doubled(&self) -> u64 {
        self.doubled.iter().zip(&self.positive).filter(|(_, p)| **p).map(|(r, _)| r).sum()
    }

    fn total_doubled(&self) -> u64 {
        self.doubled.iter().sum()
    }

    /// `(P(W+ ≤ obs), P(W+ ≥ obs))` by enumerating all `2^n` sign patterns.
    fn exact_tails(&self) -> (f64, f64) {
        let total = self.total_doubled() as usize;
        // Distribution of the doubled W+ via subset-sum counts.
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &self.doubled {
            let r = r as usize;
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = (1u64 << self.doubled.len()) as f64;
        let obs = self.w_plus_doubled() as usize;
        let le: u64 = counts[..=obs].iter().sum();
        let ge: u64 = counts[obs..].iter().sum();
        (le as f64 / all, ge as f64 / all)
    }

    fn normal_tails(&self) -> (f64, f64) {
        let n = self.doubled.len() as f64;
        let mean = n * (n + 1.0) / 4.0;
        let ties: f64 = self.tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
        let sd = var.sqrt();
        let w = self.w_plus_doubled() as f64 / 2.0;
        let le = normal_cdf((w - mean + CONTINUITY) / sd);
        let ge = 1.0 - normal_cdf((w - mean - CONTINUITY) / sd);
        (le.min(1.0), ge.min(1.0))
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn finish(sr: &SignedRanks, (le, ge): (f64, f64), method: PMethod) -> WilcoxonResult {
    let w_plus = sr.w_plus_doubled() as f64 / 2.0;
    let w_minus = sr.total_doubled() as f64 / 2.0 - w_plus;
    WilcoxonResult {
        n: sr.doubled.len(),
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_two_sided: (2.0 * le.min(ge)).min(1.0),
        p_greater: ge,
        p_less: le,
        method,
    }
}

/// Wilcoxon signed-rank test on `a − b`. Zero differences are dropped;
/// p-values are exact for `n ≤ 12` and normal-approximated above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let sr = signed_ranks(a, b)?;
    if sr.doubled.len() <= EXACT_MAX_N {
        Ok(finish(&sr, sr.exact_tails(), PMethod::Exact))
    } else {
        Ok(finish(&sr, sr.normal_tails(), PMethod::Normal))
    }
}

/// Same test forcing one p-value method regardless of `n`.
pub fn wilcoxon_with(a: &[f64], b: &[f64], method: PMethod) -> Result<WilcoxonResult> {
    let sr = signed_ranks(a, b)?;
    if method == PMethod::Exact && sr.doubled.len() > 30 {
        return Err(Error::Runtime("exact Wilcoxon limited to 30 pairs".into()));
    }
    let tails = match method {
        PMethod::Exact => sr.exact_tails(),
        PMethod::Normal => sr.normal_tails(),
    };
    Ok(finish(&sr, tails, method))
}

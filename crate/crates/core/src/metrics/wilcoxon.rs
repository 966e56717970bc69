use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WilcoxonMethod {
    /// Exact conditional null distribution for up to [`EXACT_LIMIT`] nonzero
    /// differences, normal approximation beyond.
    #[default]
    Auto,
    /// Tie-corrected normal approximation with continuity correction.
    Normal,
}

/// Largest sample decided by exact enumeration under [`WilcoxonMethod::Auto`].
pub const EXACT_LIMIT: usize = 50;

/// Smallest number of nonzero differences accepted.
pub const MIN_PAIRS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided paired signed-rank test of `a` against `b`. Zero differences
/// are dropped; tied magnitudes share their average rank.
pub fn wilcoxon(a: &[f64], b: &[f64], method: WilcoxonMethod) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!("{} paired scores vs {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("score difference".into()));
    }
    if diffs.is_empty() {
        return Err(Error::DegenerateSample("all paired differences are zero".into()));
    }
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(Error::invalid(format!("{n} nonzero differences; at least {MIN_PAIRS} required")));
    }
    let ranks2 = doubled_ranks(&diffs);
    let w_plus2: usize = diffs.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total2 = n * (n + 1);
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;
    let exact = method == WilcoxonMethod::Auto && n <= EXACT_LIMIT;
    let p_value = if exact {
        exact_p(&ranks2, w_plus2)
    } else {
        normal_p(&diffs, w_plus)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_value,
        exact,
    })
}

/// Twice the average rank of each |d|, so tied ranks stay integral.
fn doubled_ranks(diffs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..diffs.len()).collect();
    idx.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0; diffs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && diffs[idx[j + 1]].abs() == diffs[idx[i]].abs() {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, doubled.
        let r2 = i + j + 2;
        for &k in &idx[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

fn tie_groups(diffs: &[f64]) -> Vec<usize> {
    let mut mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < mags.len() {
        let j = mags[i..].iter().take_while(|&&m| m == mags[i]).count();
        groups.push(j);
        i += j;
    }
    groups
}

/// `2 min(P(W+ ≤ w), P(W+ ≥ w))` under random signs, capped at 1.
fn exact_p(ranks2: &[usize], w_plus2: usize) -> f64 {
    let total: usize = ranks2.iter().sum();
    let mut dist = vec![0.0f64; total + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in ranks2 {
        for s in (0..=reach).rev() {
            let p = dist[s];
            if p != 0.0 {
                dist[s] = 0.5 * p;
                dist[s + r] += 0.5 * p;
            }
        }
        reach += r;
    }
    let lower: f64 = dist[..=w_plus2].iter().sum();
    let upper: f64 = dist[w_plus2..].iter().sum();
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(diffs: &[f64], w_plus: f64) -> f64 {
    let n = diffs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let ties: f64 = tie_groups(diffs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}

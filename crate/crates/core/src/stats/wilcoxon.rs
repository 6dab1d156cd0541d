//! Wilcoxon signed-rank test, one-sided upper tail.
//!
//! Zeros are dropped, the remaining |Δ| get tie-averaged ranks and
//! W = Σ sign(Δᵢ)·rᵢ. The exact null is the law of Σ ±rᵢ with independent
//! fair signs on the observed rank multiset, which stays exact under ties.

use serde::{Deserialize, Serialize};

use super::{check_finite, doubled_ranks, std_normal_sf, Method, StatError, TestResult};

/// Largest effective sample size for which `Auto` uses the exact null.
pub const WILCOXON_EXACT_MAX_N: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    Exact,
    Normal,
    #[default]
    Auto,
}

pub fn wilcoxon_signed_rank(diffs: &[f64], mode: WilcoxonMode) -> Result<TestResult, StatError> {
    check_finite(diffs)?;
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n_zero = diffs.len() - nonzero.len();
    if nonzero.is_empty() {
        return Err(StatError::AllZeroDifferences);
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let doubled = doubled_ranks(&abs);
    let total: u64 = doubled.iter().sum();
    let t_plus: u64 = doubled
        .iter()
        .zip(&nonzero)
        .filter(|(_, &d)| d > 0.0)
        .map(|(&r, _)| r)
        .sum();
    // W = T⁺ − T⁻ in rank units; doubled ranks halve back out.
    let w = t_plus as f64 - total as f64 / 2.0;
    let n = nonzero.len();
    let has_ties = {
        let mut sorted = doubled.clone();
        sorted.sort_unstable();
        sorted.windows(2).any(|p| p[0] == p[1])
    };

    let exact = match mode {
        WilcoxonMode::Exact => true,
        WilcoxonMode::Normal => false,
        WilcoxonMode::Auto => n <= WILCOXON_EXACT_MAX_N,
    };

    let mut notes = Vec::new();
    if n_zero > 0 {
        notes.push(format!("dropped {n_zero} zero differences"));
    }
    if has_ties {
        notes.push("tied |differences| received averaged ranks".to_string());
    }

    let (p, method) = if exact {
        (wilcoxon_exact_upper_tail(&doubled, t_plus), Method::WilcoxonExact)
    } else {
        let var: f64 = doubled.iter().map(|&d| (d as f64 / 2.0).powi(2)).sum();
        let z = (w - 1.0) / var.sqrt();
        notes.push(format!("normal approximation z = {z}"));
        (std_normal_sf(z), Method::WilcoxonNormal)
    };

    Ok(TestResult {
        statistic: w,
        p_value: p.clamp(0.0, 1.0),
        method,
        n_effective: n,
        notes,
    })
}

/// P(Σ εᵢ·dᵢ ≥ t) for independent εᵢ ∈ {0, 1} with probability ½ each, where
/// `dᵢ` are doubled ranks and `t` the observed doubled positive-rank sum.
///
/// Probabilities are dyadic rationals, so the result is exact in `f64` for up
/// to 53 ranks.
pub fn wilcoxon_exact_upper_tail(doubled: &[u64], t: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    if t > total {
        return 0.0;
    }
    let mut dist = vec![0.0f64; total as usize + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &d in doubled {
        let d = d as usize;
        for s in (0..=reach).rev() {
            let half = dist[s] * 0.5;
            dist[s] = half;
            dist[s + d] += half;
        }
        reach += d;
    }
    dist[t as usize..].iter().sum()
}

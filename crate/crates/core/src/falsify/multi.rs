//! Conditional rank test for M ≥ 1 permissible proxies.
//!
//! Within each evaluation row the M + 1 losses are ranked 1..=M+1 (ties get
//! averaged ranks). Under the null the impermissible column is exchangeable
//! with the permissible ones, so its rank is a uniform draw from the row's
//! rank multiset. The statistic is the mean impermissible rank R̄.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    calibration_entries, check_bindings, check_split, with_threads, CalibrationSource,
    FalsificationConfig, FalsificationReport, FalsifyError, MultiProxyMode, Procedure, Verdict,
    MIN_PERMUTATIONS, REPORT_SCHEMA_VERSION,
};
use crate::dataset::EvalDataset;
use crate::loss::{build_loss_matrix, LossMatrix};
use crate::seeds::substream;
use crate::stats::{doubled_ranks, std_normal_sf, Method, TestResult};

/// Within-row ranks, stored doubled so tie averages stay integral.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRanks {
    doubled: Vec<u32>,
    k: usize,
    /// Integer ranks spanned by the impermissible column's tie group.
    imp_span: Vec<(u32, u32)>,
}

impl RowRanks {
    pub fn n_rows(&self) -> usize {
        self.imp_span.len()
    }

    /// M + 1.
    pub fn n_cols(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.k - 1
    }

    pub fn row_doubled(&self, i: usize) -> &[u32] {
        &self.doubled[i * self.k..(i + 1) * self.k]
    }

    pub fn rank(&self, i: usize, j: usize) -> f64 {
        self.doubled[i * self.k + j] as f64 / 2.0
    }

    pub fn impermissible_rank(&self, i: usize) -> f64 {
        self.rank(i, LossMatrix::IMPERMISSIBLE)
    }

    pub fn impermissible_ranks(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.impermissible_rank(i)).collect()
    }

    fn impermissible_doubled_sum(&self) -> u64 {
        (0..self.n_rows())
            .map(|i| self.doubled[i * self.k] as u64)
            .sum()
    }

    /// R̄ = mean impermissible rank.
    pub fn mean_impermissible_rank(&self) -> f64 {
        self.impermissible_doubled_sum() as f64 / (2.0 * self.n_rows() as f64)
    }
}

/// Ranks each loss row ascending, so the worst loss gets rank M + 1.
///
/// Fails if a row's ranks do not sum to (M+1)(M+2)/2.
pub fn rank_rows(matrix: &LossMatrix) -> Result<RowRanks, FalsifyError> {
    let k = matrix.n_cols();
    let expected = (k * (k + 1)) as u64;
    let mut doubled = Vec::with_capacity(matrix.n_rows() * k);
    let mut imp_span = Vec::with_capacity(matrix.n_rows());
    for (i, row) in matrix.rows().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(crate::stats::StatError::NonFinite(i * k + j).into());
        }
        let d = doubled_ranks(row);
        if d.iter().sum::<u64>() != expected {
            return Err(FalsifyError::RankInvariant { row: i });
        }
        let imp = row[LossMatrix::IMPERMISSIBLE];
        let g = row.iter().filter(|&&v| v == imp).count() as u64;
        let d0 = d[LossMatrix::IMPERMISSIBLE];
        imp_span.push((((d0 + 1 - g) / 2) as u32, ((d0 + g - 1) / 2) as u32));
        doubled.extend(d.into_iter().map(|r| r as u32));
    }
    Ok(RowRanks {
        doubled,
        k,
        imp_span,
    })
}

/// Monte-Carlo p-value (1 + #{b : S_b ≥ S_obs}) / (B + 1).
///
/// Each replicate b draws, per row, one rank uniformly from that row's ranks
/// using sub-stream b of `seed`, so the result does not depend on thread count.
/// Returns the p-value and the exceedance count.
pub fn permutation_rank_p_value(ranks: &RowRanks, permutations: usize, seed: u64) -> (f64, u64) {
    let observed = ranks.impermissible_doubled_sum();
    let k = ranks.k;
    let n = ranks.n_rows();
    let count: u64 = (0..permutations as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b);
            let mut s = 0u64;
            for i in 0..n {
                s += ranks.doubled[i * k + rng.random_range(0..k)] as u64;
            }
            (s >= observed) as u64
        })
        .sum();
    ((1 + count) as f64 / (permutations as f64 + 1.0), count)
}

/// Normal approximation: rows are independent uniform draws from their own
/// rank multisets, so E[R̄] = (M+2)/2 and Var[R̄] = Σ Varᵢ / n².
///
/// Returns `(p, z)`; when every row is fully tied the variance is zero and
/// `(1, None)` is returned.
pub fn normal_rank_p_value(ranks: &RowRanks) -> (f64, Option<f64>) {
    let k = ranks.k as f64;
    let n = ranks.n_rows() as f64;
    let center = (k + 1.0) / 2.0;
    let total_var: f64 = (0..ranks.n_rows())
        .map(|i| {
            ranks
                .row_doubled(i)
                .iter()
                .map(|&d| (d as f64 / 2.0 - center).powi(2))
                .sum::<f64>()
                / k
        })
        .sum();
    if total_var <= 0.0 {
        return (1.0, None);
    }
    let z = (ranks.mean_impermissible_rank() - center) / (total_var.sqrt() / n);
    (std_normal_sf(z), Some(z))
}

/// Runs the rank test on a precomputed loss matrix.
pub fn rank_test(
    matrix: &LossMatrix,
    mode: MultiProxyMode,
    permutations: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<(TestResult, RowRanks), FalsifyError> {
    if matrix.n_rows() == 0 {
        return Err(crate::stats::StatError::TooFewSamples { needed: 1, got: 0 }.into());
    }
    let ranks = rank_rows(matrix)?;
    let stat = ranks.mean_impermissible_rank();
    let mut notes = Vec::new();
    let (p_value, method) = match mode {
        MultiProxyMode::Permutation => {
            if permutations < MIN_PERMUTATIONS {
                return Err(FalsifyError::PermutationBudgetTooSmall(permutations));
            }
            let (p, count) =
                with_threads(threads, || permutation_rank_p_value(&ranks, permutations, seed))?;
            notes.push(format!("{count} of {permutations} permutations reached the observed sum"));
            (p, Method::RankPermutation)
        }
        MultiProxyMode::Normal => {
            let (p, z) = normal_rank_p_value(&ranks);
            match z {
                Some(z) => notes.push(format!("normal approximation z = {z}")),
                None => notes.push("every row fully tied; null variance is zero".into()),
            }
            (p, Method::RankNormal)
        }
    };
    let full_ties = (0..ranks.n_rows())
        .filter(|&i| {
            let r = ranks.row_doubled(i);
            r.iter().all(|&d| d == r[0])
        })
        .count();
    if full_ties > 0 {
        notes.push(format!("{full_ties} rows fully tied"));
    }
    Ok((
        TestResult {
            statistic: stat,
            p_value,
            method,
            n_effective: ranks.n_rows(),
            notes,
        },
        ranks,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankBin {
    pub rank: u32,
    /// Tied impermissible ranks spread one unit evenly across the ranks they span.
    pub count: f64,
    pub proportion: f64,
}

/// Distribution of the impermissible rank across rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub mean_rank: f64,
    pub null_mean_rank: f64,
    /// 1/(M+1), the null share of each rank.
    pub null_expectation: f64,
    pub histogram: Vec<RankBin>,
}

impl RankSummary {
    pub fn from_ranks(ranks: &RowRanks) -> Self {
        let k = ranks.k;
        let mut counts = vec![0.0f64; k];
        for &(lo, hi) in &ranks.imp_span {
            let w = 1.0 / (hi - lo + 1) as f64;
            for r in lo..=hi {
                counts[r as usize - 1] += w;
            }
        }
        let n = ranks.n_rows() as f64;
        Self {
            mean_rank: ranks.mean_impermissible_rank(),
            null_mean_rank: (k as f64 + 1.0) / 2.0,
            null_expectation: 1.0 / k as f64,
            histogram: counts
                .into_iter()
                .enumerate()
                .map(|(r, count)| RankBin {
                    rank: r as u32 + 1,
                    count,
                    proportion: count / n,
                })
                .collect(),
        }
    }
}

/// Tests whether the impermissible loss ranks higher than exchangeability allows.
pub fn run_multi_proxy(
    dataset: &EvalDataset,
    permissibles: &[String],
    impermissible: &str,
    config: &FalsificationConfig,
) -> Result<FalsificationReport, FalsifyError> {
    run_multi_proxy_with(
        dataset,
        permissibles,
        impermissible,
        config,
        &CalibrationSource::from_config(config),
    )
}

pub fn run_multi_proxy_with(
    dataset: &EvalDataset,
    permissibles: &[String],
    impermissible: &str,
    config: &FalsificationConfig,
    source: &CalibrationSource,
) -> Result<FalsificationReport, FalsifyError> {
    config.validate()?;
    check_bindings(dataset, permissibles, impermissible)?;
    check_split(dataset)?;

    let mut names = vec![impermissible.to_string()];
    names.extend(permissibles.iter().cloned());
    let calibrations = source.resolve(dataset, &names)?;
    let matrix = build_loss_matrix(
        dataset,
        impermissible,
        permissibles,
        &calibrations,
        config.loss_kind,
    )?;
    let (test, ranks) = rank_test(
        &matrix,
        config.multi_proxy_mode,
        config.permutations,
        config.seed,
        config.threads,
    )?;
    let verdict = Verdict::from_p(test.p_value, config.alpha);

    Ok(FalsificationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        procedure: Procedure::MultiProxy,
        verdict,
        verdict_label: verdict.label().to_string(),
        test,
        alpha: config.alpha,
        n: matrix.n_rows(),
        m: permissibles.len(),
        permutations: (config.multi_proxy_mode == MultiProxyMode::Permutation)
            .then_some(config.permutations),
        seed: config.seed,
        loss_kind: config.loss_kind,
        calibrate: !matches!(source, CalibrationSource::Identity),
        calibration_source: source.label().to_string(),
        impermissible: impermissible.to_string(),
        permissibles: permissibles.to_vec(),
        calibrations: calibration_entries(&calibrations, &names),
        diagnostics: None,
        rank_summary: Some(RankSummary::from_ranks(&ranks)),
        diff_summary: None,
        dataset_fingerprint: dataset.fingerprint(),
        config: config.clone(),
    })
}

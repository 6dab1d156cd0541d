//! Statistical primitives: one-sided t-test, Wilcoxon signed-rank test,
//! normality and outlier screens, and the distribution functions they use.

mod diagnostics;
mod distributions;
mod rank;
mod ttest;
mod wilcoxon;

pub use diagnostics::{
    diagnose, normality_check, outlier_check, quantile_linear, DiagnosticReport, Normality,
    Recommendation, NORMALITY_MIN_N,
};
pub use distributions::{
    reg_inc_beta, std_normal_cdf, std_normal_sf, student_t_cdf, student_t_sf,
};
pub use rank::{doubled_ranks, tie_averaged_ranks};
pub use ttest::t_test_one_sided_greater;
pub use wilcoxon::{
    wilcoxon_exact_upper_tail, wilcoxon_signed_rank, WilcoxonMode, WILCOXON_EXACT_MAX_N,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("all differences are equal; variance is zero")]
    DegenerateVariance,
    #[error("all differences are zero; the signed-rank test has no information")]
    AllZeroDifferences,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// Which computation produced a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TTest,
    WilcoxonExact,
    WilcoxonNormal,
    RankPermutation,
    RankNormal,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::TTest => "t_test",
            Method::WilcoxonExact => "wilcoxon_exact",
            Method::WilcoxonNormal => "wilcoxon_normal",
            Method::RankPermutation => "rank_permutation",
            Method::RankNormal => "rank_normal",
        };
        f.write_str(s)
    }
}

/// Outcome of a one-sided test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub n_effective: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub(crate) fn check_finite(xs: &[f64]) -> Result<(), StatError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatError::NonFinite(i)),
        None => Ok(()),
    }
}

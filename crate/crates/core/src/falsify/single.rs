//! Single-proxy test on paired loss differences Δᵢ = ℓ(imp) − ℓ(perm).

use serde::{Deserialize, Serialize};

use super::{
    calibration_entries, check_bindings, check_split, CalibrationSource, FalsificationConfig,
    FalsificationReport, FalsifyError, Procedure, SingleProxyMode, Verdict,
    REPORT_SCHEMA_VERSION,
};
use crate::dataset::EvalDataset;
use crate::loss::build_loss_matrix;
use crate::stats::{
    diagnose, t_test_one_sided_greater, wilcoxon_signed_rank, Method, Recommendation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Summary of the differences that entered the test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_zero: usize,
    pub histogram: Vec<HistogramBin>,
}

impl DiffSummary {
    pub fn from_diffs(diffs: &[f64]) -> Self {
        let n = diffs.len();
        let mut sorted = diffs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = match (sorted.first(), sorted.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (f64::NAN, f64::NAN),
        };
        let median = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Self {
            n,
            mean: diffs.iter().sum::<f64>() / n as f64,
            median,
            min,
            max,
            n_positive: diffs.iter().filter(|&&d| d > 0.0).count(),
            n_negative: diffs.iter().filter(|&&d| d < 0.0).count(),
            n_zero: diffs.iter().filter(|&&d| d == 0.0).count(),
            histogram: sturges_histogram(&sorted),
        }
    }
}

/// Equal-width bins, ⌈log₂ n⌉ + 1 of them; the last bin is closed.
fn sturges_histogram(sorted: &[f64]) -> Vec<HistogramBin> {
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if lo == hi {
        return vec![HistogramBin {
            lower: lo,
            upper: hi,
            count: n,
        }];
    }
    let k = (n as f64).log2().ceil() as usize + 1;
    let width = (hi - lo) / k as f64;
    let mut counts = vec![0usize; k];
    for &x in sorted {
        let b = (((x - lo) / width) as usize).min(k - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lower: lo + b as f64 * width,
            upper: if b + 1 == k { hi } else { lo + (b + 1) as f64 * width },
            count,
        })
        .collect()
}

/// Tests H₀: E[Δ] ≤ 0 against E[Δ] > 0 for one permissible proxy.
pub fn run_single_proxy(
    dataset: &EvalDataset,
    permissible: &str,
    impermissible: &str,
    config: &FalsificationConfig,
) -> Result<FalsificationReport, FalsifyError> {
    run_single_proxy_with(
        dataset,
        permissible,
        impermissible,
        config,
        &CalibrationSource::from_config(config),
    )
}

pub fn run_single_proxy_with(
    dataset: &EvalDataset,
    permissible: &str,
    impermissible: &str,
    config: &FalsificationConfig,
    source: &CalibrationSource,
) -> Result<FalsificationReport, FalsifyError> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(FalsifyError::Config(format!(
            "alpha must lie in (0, 1), got {}",
            config.alpha
        )));
    }
    let permissibles = vec![permissible.to_string()];
    check_bindings(dataset, &permissibles, impermissible)?;
    check_split(dataset)?;

    let names = vec![impermissible.to_string(), permissible.to_string()];
    let calibrations = source.resolve(dataset, &names)?;
    let matrix = build_loss_matrix(
        dataset,
        impermissible,
        &permissibles,
        &calibrations,
        config.loss_kind,
    )?;
    let diffs = matrix.differences();
    let diagnostics = diagnose(&diffs);

    let use_t = match config.single_proxy_mode {
        SingleProxyMode::TTest => true,
        SingleProxyMode::Wilcoxon => false,
        SingleProxyMode::Auto => diagnostics.recommendation == Recommendation::TTest,
    };
    let mut test = if use_t {
        t_test_one_sided_greater(&diffs)?
    } else {
        wilcoxon_signed_rank(&diffs, config.wilcoxon_mode)?
    };
    if config.single_proxy_mode == SingleProxyMode::Auto {
        test.notes.push(format!(
            "auto mode selected {} from diagnostics",
            if use_t { "the t-test" } else { "the signed-rank test" }
        ));
    }

    let tested: Vec<f64> = match test.method {
        Method::TTest => diffs.clone(),
        _ => diffs.iter().copied().filter(|&d| d != 0.0).collect(),
    };
    let verdict = Verdict::from_p(test.p_value, config.alpha);

    Ok(FalsificationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        procedure: Procedure::SingleProxy,
        verdict,
        verdict_label: verdict.label().to_string(),
        test,
        alpha: config.alpha,
        n: matrix.n_rows(),
        m: 1,
        permutations: None,
        seed: config.seed,
        loss_kind: config.loss_kind,
        calibrate: !matches!(source, CalibrationSource::Identity),
        calibration_source: source.label().to_string(),
        impermissible: impermissible.to_string(),
        permissibles,
        calibrations: calibration_entries(&calibrations, &names),
        diagnostics: Some(diagnostics),
        rank_summary: None,
        diff_summary: Some(DiffSummary::from_diffs(&tested)),
        dataset_fingerprint: dataset.fingerprint(),
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let xs: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = DiffSummary::from_diffs(&xs);
        assert_eq!(s.histogram.len(), 7);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<usize>(), 37);
        assert_eq!(s.histogram.last().unwrap().upper, s.max);
    }

    #[test]
    fn constant_values_make_one_bin() {
        let s = DiffSummary::from_diffs(&[0.5; 4]);
        assert_eq!(s.histogram.len(), 1);
        assert_eq!(s.histogram[0].count, 4);
        assert_eq!(s.median, 0.5);
    }
}

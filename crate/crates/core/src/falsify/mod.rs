//! Falsification procedures.
//!
//! [`run_single_proxy`] compares one permissible proxy against the
//! impermissible one through paired loss differences. [`run_multi_proxy`]
//! handles M ≥ 1 permissible proxies with the conditional rank test. Both fit
//! Platt scaling per outcome on the calibration split, compute losses on the
//! evaluation split, and return DISCRIMINANT when p ≤ α.

mod multi;
mod plot;
mod single;

pub use multi::{
    normal_rank_p_value, permutation_rank_p_value, rank_rows, rank_test, run_multi_proxy,
    run_multi_proxy_with, RankBin, RankSummary, RowRanks,
};
pub use plot::{emit_plot_data, emit_plot_data_with_header, DIFF_HISTOGRAM_FILE, RANK_HISTOGRAM_FILE};
pub use single::{run_single_proxy, run_single_proxy_with, DiffSummary, HistogramBin};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{fit_platt, CalibrationError, Calibrator, PlattOptions};
use crate::dataset::{DatasetError, EvalDataset};
use crate::loss::{LossError, LossKind};
use crate::stats::{DiagnosticReport, StatError, TestResult, WilcoxonMode};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Smallest permutation budget accepted.
pub const MIN_PERMUTATIONS: usize = 99;

#[derive(Debug, Error)]
pub enum FalsifyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("permutation budget {0} is below the minimum of 99")]
    PermutationBudgetTooSmall(usize),
    #[error("calibration of `{outcome}` failed: {source}")]
    Calibration {
        outcome: String,
        #[source]
        source: CalibrationError,
    },
    #[error("row {row}: within-row ranks do not sum to (M+1)(M+2)/2")]
    RankInvariant { row: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "DISCRIMINANT")]
    Discriminant,
    #[serde(rename = "INDISCRIMINANT")]
    Indiscriminant,
}

impl Verdict {
    pub fn from_p(p_value: f64, alpha: f64) -> Self {
        if p_value <= alpha {
            Verdict::Discriminant
        } else {
            Verdict::Indiscriminant
        }
    }

    /// Text printed to users; an indiscriminant result is inconclusive.
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Discriminant => "DISCRIMINANT",
            Verdict::Indiscriminant => "INDISCRIMINANT (inconclusive)",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Discriminant => "DISCRIMINANT",
            Verdict::Indiscriminant => "INDISCRIMINANT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleProxyMode {
    /// Diagnostics pick the t-test only when they support normality.
    #[default]
    Auto,
    TTest,
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiProxyMode {
    #[default]
    Permutation,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    SingleProxy,
    MultiProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FalsificationConfig {
    pub alpha: f64,
    pub loss_kind: LossKind,
    /// Fit Platt scaling per outcome; off means scores are used as probabilities.
    pub calibrate: bool,
    pub single_proxy_mode: SingleProxyMode,
    pub wilcoxon_mode: WilcoxonMode,
    pub multi_proxy_mode: MultiProxyMode,
    pub permutations: usize,
    pub seed: u64,
    pub platt: PlattOptions,
    /// Worker threads for permutations; results do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for FalsificationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            loss_kind: LossKind::LogLoss,
            calibrate: true,
            single_proxy_mode: SingleProxyMode::Auto,
            wilcoxon_mode: WilcoxonMode::Auto,
            multi_proxy_mode: MultiProxyMode::Permutation,
            permutations: 9999,
            seed: 0,
            platt: PlattOptions::default(),
            threads: None,
        }
    }
}

impl FalsificationConfig {
    pub fn validate(&self) -> Result<(), FalsifyError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FalsifyError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.multi_proxy_mode == MultiProxyMode::Permutation
            && self.permutations < MIN_PERMUTATIONS
        {
            return Err(FalsifyError::PermutationBudgetTooSmall(self.permutations));
        }
        Ok(())
    }
}

/// Where per-outcome calibrations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationSource {
    /// Fit Platt scaling on the calibration split.
    Fit(PlattOptions),
    /// Use scores as probabilities.
    Identity,
    /// Caller-provided calibrators, e.g. a known data-generating link.
    Supplied(BTreeMap<String, Calibrator>),
}

impl CalibrationSource {
    pub fn from_config(config: &FalsificationConfig) -> Self {
        if config.calibrate {
            CalibrationSource::Fit(config.platt)
        } else {
            CalibrationSource::Identity
        }
    }

    fn label(&self) -> &'static str {
        match self {
            CalibrationSource::Fit(_) => "fitted",
            CalibrationSource::Identity => "identity",
            CalibrationSource::Supplied(_) => "supplied",
        }
    }

    /// Resolves one calibrator per named outcome.
    pub fn resolve(
        &self,
        dataset: &EvalDataset,
        outcomes: &[String],
    ) -> Result<BTreeMap<String, Calibrator>, FalsifyError> {
        let mut out = BTreeMap::new();
        for name in outcomes {
            let cal = match self {
                CalibrationSource::Identity => Calibrator::Identity,
                CalibrationSource::Supplied(map) => map
                    .get(name)
                    .cloned()
                    .ok_or_else(|| LossError::MissingCalibration(name.clone()))?,
                CalibrationSource::Fit(opts) => {
                    let j = dataset.outcome_index(name)?;
                    let idx = dataset.calibration_indices()?;
                    let (scores, labels) = dataset.column(j, &idx);
                    let params = fit_platt(name, &scores, &labels, opts).map_err(|source| {
                        FalsifyError::Calibration {
                            outcome: name.clone(),
                            source,
                        }
                    })?;
                    Calibrator::Platt(params)
                }
            };
            out.insert(name.clone(), cal);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub outcome: String,
    pub calibrator: Calibrator,
}

/// Verdicted result of one falsification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub schema_version: u32,
    pub procedure: Procedure,
    pub verdict: Verdict,
    pub verdict_label: String,
    #[serde(flatten)]
    pub test: TestResult,
    pub alpha: f64,
    /// Evaluation records.
    pub n: usize,
    /// Number of permissible proxies.
    pub m: usize,
    pub permutations: Option<usize>,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub calibrate: bool,
    pub calibration_source: String,
    pub impermissible: String,
    pub permissibles: Vec<String>,
    pub calibrations: Vec<CalibrationEntry>,
    pub diagnostics: Option<DiagnosticReport>,
    pub rank_summary: Option<RankSummary>,
    pub diff_summary: Option<DiffSummary>,
    pub dataset_fingerprint: String,
    pub config: FalsificationConfig,
}

impl FalsificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_bindings(
    dataset: &EvalDataset,
    permissibles: &[String],
    impermissible: &str,
) -> Result<(), FalsifyError> {
    if permissibles.is_empty() {
        return Err(FalsifyError::Config(
            "at least one permissible outcome is required".into(),
        ));
    }
    for name in permissibles.iter().map(String::as_str).chain([impermissible]) {
        dataset
            .outcome_index(name)
            .map_err(|_| FalsifyError::Config(format!("unknown outcome `{name}`")))?;
    }
    let mut seen = std::collections::HashSet::new();
    for p in permissibles {
        if p == impermissible {
            return Err(FalsifyError::Config(format!(
                "`{p}` is bound as both permissible and impermissible"
            )));
        }
        if !seen.insert(p) {
            return Err(FalsifyError::Config(format!("`{p}` listed twice")));
        }
    }
    Ok(())
}

/// Requires a split with at least two evaluation records.
fn check_split(dataset: &EvalDataset) -> Result<(), FalsifyError> {
    let cal = dataset.calibration_indices()?.len();
    let eval = dataset.len() - cal;
    if eval < 2 {
        return Err(DatasetError::SplitTooSmall {
            calibration: cal,
            evaluation: eval,
        }
        .into());
    }
    Ok(())
}

fn calibration_entries(
    map: &BTreeMap<String, Calibrator>,
    order: &[String],
) -> Vec<CalibrationEntry> {
    order
        .iter()
        .map(|name| CalibrationEntry {
            outcome: name.clone(),
            calibrator: map[name].clone(),
        })
        .collect()
}

/// Runs `f` on a dedicated pool when a thread count is requested.
pub(crate) fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, FalsifyError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| FalsifyError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

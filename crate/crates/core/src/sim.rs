//! Synthetic data and Monte-Carlo experiments.
//!
//! Scores are standard normal; each outcome's labels are drawn independently
//! given the score with P(y = 1 | s) = σ(slope·s + intercept). Outcomes with
//! identical links are exchangeable by construction.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{Calibrator, PlattParams};
use crate::dataset::{DatasetError, EvalDataset, EvalRecord, OutcomeSpec, Role};
use crate::falsify::{
    run_multi_proxy_with, run_single_proxy_with, CalibrationSource, FalsificationConfig,
    FalsifyError, MultiProxyMode, Verdict, with_threads,
};
use crate::loss::LossKind;
use crate::seeds::derive_seed;

pub const MIN_N: usize = 10;
pub const MIN_TRIALS: usize = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("outcomes `{a}` and `{b}` have different links; the null does not hold")]
    NonExchangeableSpec { a: String, b: String },
    #[error("need at least {MIN_TRIALS} trials, got {0}")]
    TooFewTrials(usize),
    #[error("unknown outcome `{0}` in experiment")]
    UnknownOutcome(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Falsify(#[from] FalsifyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// P(y = 1 | s) = σ(slope·s + intercept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub role: Role,
    pub slope: f64,
    #[serde(default)]
    pub intercept: f64,
}

impl Link {
    pub fn new(name: impl Into<String>, role: Role, slope: f64, intercept: f64) -> Self {
        Self {
            name: name.into(),
            role,
            slope,
            intercept,
        }
    }

    /// The generating link written as Platt parameters on the latent score.
    pub fn as_calibrator(&self) -> Calibrator {
        Calibrator::Platt(PlattParams {
            a: -self.slope,
            b: -self.intercept,
            outcome: self.name.clone(),
            n_fit: 0,
            smoothing_applied: false,
        })
    }
}

/// How the reported score relates to the latent standard-normal score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreScale {
    /// Report the latent score.
    #[default]
    Latent,
    /// Report σ(slope·s), a probability-valued score.
    Sigmoid { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Share of records assigned to the calibration split.
    #[serde(default = "default_cal_fraction")]
    pub calibration_fraction: f64,
    pub links: Vec<Link>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub score_scale: ScoreScale,
}

fn default_cal_fraction() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < MIN_N {
            return Err(SimError::InvalidSpec(format!("n must be at least {MIN_N}, got {}", self.n)));
        }
        if self.links.is_empty() {
            return Err(SimError::InvalidSpec("no outcome links".into()));
        }
        for l in &self.links {
            if !l.slope.is_finite() || !l.intercept.is_finite() {
                return Err(SimError::InvalidSpec(format!("link `{}` is not finite", l.name)));
            }
        }
        if let ScoreScale::Sigmoid { slope } = self.score_scale {
            if !slope.is_finite() || slope == 0.0 {
                return Err(SimError::InvalidSpec("sigmoid score slope must be finite and non-zero".into()));
            }
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(SimError::InvalidSpec(format!(
                "calibration_fraction must lie in (0, 1), got {}",
                self.calibration_fraction
            )));
        }
        Ok(())
    }

    pub fn link(&self, name: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.name == name)
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Unsplit records; deterministic in `spec.seed`.
pub fn generate_unsplit(spec: &SyntheticSpec) -> Result<EvalDataset, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "generate", 0));
    let records = (0..spec.n)
        .map(|_| {
            let s: f64 = StandardNormal.sample(&mut rng);
            let labels = spec
                .links
                .iter()
                .map(|l| rng.random::<f64>() < sigmoid(l.slope * s + l.intercept))
                .collect();
            let score = match spec.score_scale {
                ScoreScale::Latent => s,
                ScoreScale::Sigmoid { slope } => sigmoid(slope * s),
            };
            EvalRecord { score, labels }
        })
        .collect();
    let outcomes = spec
        .links
        .iter()
        .map(|l| OutcomeSpec {
            name: l.name.clone(),
            role: l.role,
        })
        .collect();
    Ok(EvalDataset::new(records, outcomes, None)?)
}

/// Records split into calibration and evaluation parts.
pub fn generate(spec: &SyntheticSpec) -> Result<EvalDataset, SimError> {
    let ds = generate_unsplit(spec)?;
    Ok(ds.split(spec.calibration_fraction, derive_seed(spec.seed, "split", 0))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimProcedure {
    /// Single-proxy test; the config's single-proxy mode picks the test.
    Alg1,
    Alg2Perm,
    Alg2Normal,
}

/// Calibrators used inside each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimCalibration {
    /// Platt scaling fitted per outcome on each trial's calibration split.
    #[default]
    Fitted,
    /// The generating links themselves; requires latent scores.
    KnownLink,
    /// Scores used as probabilities; requires sigmoid scores.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub spec: SyntheticSpec,
    pub procedure: SimProcedure,
    pub impermissible: String,
    pub permissibles: Vec<String>,
    pub trials: usize,
    /// Rejection level; may be 0.
    pub alpha: f64,
    #[serde(default)]
    pub calibration: SimCalibration,
    #[serde(default)]
    pub config: FalsificationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub p_value: Option<f64>,
    pub rejected: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: String,
    pub procedure: SimProcedure,
    pub calibration: SimCalibration,
    pub trials: usize,
    /// Trials whose test ran; the rates below are over these.
    pub completed: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mean_p: f64,
    pub alpha: f64,
    /// α + 2·√(α(1−α)/T), the Type-I tolerance band edge.
    pub type1_upper_band: f64,
    pub master_seed: u64,
    pub per_trial: Vec<TrialRecord>,
}

impl ExperimentResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// One line per trial.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "seed", "p_value", "rejected", "error"])?;
        for t in &self.per_trial {
            out.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                t.p_value.map_or_else(String::new, |p| p.to_string()),
                t.rejected.to_string(),
                t.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_experiment(exp: &Experiment) -> Result<(), SimError> {
    exp.spec.validate()?;
    if exp.trials < MIN_TRIALS {
        return Err(SimError::TooFewTrials(exp.trials));
    }
    if !(0.0..1.0).contains(&exp.alpha) {
        return Err(SimError::InvalidSpec(format!("alpha must lie in [0, 1), got {}", exp.alpha)));
    }
    if exp.permissibles.is_empty() {
        return Err(SimError::InvalidSpec("at least one permissible outcome".into()));
    }
    if exp.procedure == SimProcedure::Alg1 && exp.permissibles.len() != 1 {
        return Err(SimError::InvalidSpec("alg1 takes exactly one permissible outcome".into()));
    }
    for name in exp.permissibles.iter().chain([&exp.impermissible]) {
        if exp.spec.link(name).is_none() {
            return Err(SimError::UnknownOutcome(name.clone()));
        }
    }
    match (exp.calibration, exp.spec.score_scale) {
        (SimCalibration::KnownLink, ScoreScale::Sigmoid { .. }) => Err(SimError::InvalidSpec(
            "known-link calibration needs latent scores".into(),
        )),
        (SimCalibration::Identity, ScoreScale::Latent) => Err(SimError::InvalidSpec(
            "identity calibration needs sigmoid scores".into(),
        )),
        _ => Ok(()),
    }
}

fn run_trial(exp: &Experiment, trial: usize) -> TrialRecord {
    let seed = derive_seed(exp.spec.seed, "trial", trial as u64);
    let outcome = (|| -> Result<f64, SimError> {
        let ds = generate(&exp.spec.with_seed(seed))?;
        let mut config = exp.config.clone();
        config.seed = derive_seed(seed, "permutation", 0);
        config.threads = None;
        let source = match exp.calibration {
            SimCalibration::Fitted => CalibrationSource::Fit(config.platt),
            SimCalibration::Identity => CalibrationSource::Identity,
            SimCalibration::KnownLink => CalibrationSource::Supplied(
                exp.spec
                    .links
                    .iter()
                    .map(|l| (l.name.clone(), l.as_calibrator()))
                    .collect::<BTreeMap<_, _>>(),
            ),
        };
        let report = match exp.procedure {
            SimProcedure::Alg1 => run_single_proxy_with(
                &ds,
                &exp.permissibles[0],
                &exp.impermissible,
                &config,
                &source,
            )?,
            SimProcedure::Alg2Perm | SimProcedure::Alg2Normal => {
                config.multi_proxy_mode = if exp.procedure == SimProcedure::Alg2Perm {
                    MultiProxyMode::Permutation
                } else {
                    MultiProxyMode::Normal
                };
                run_multi_proxy_with(&ds, &exp.permissibles, &exp.impermissible, &config, &source)?
            }
        };
        Ok(report.test.p_value)
    })();
    match outcome {
        Ok(p) => TrialRecord {
            trial,
            seed,
            p_value: Some(p),
            rejected: p <= exp.alpha,
            error: None,
        },
        Err(e) => TrialRecord {
            trial,
            seed,
            p_value: None,
            rejected: false,
            error: Some(e.to_string()),
        },
    }
}

fn run_experiment(exp: &Experiment, kind: &str) -> Result<ExperimentResult, SimError> {
    // Trials run in parallel; `config.threads` sizes the pool.
    let per_trial: Vec<TrialRecord> = with_threads(exp.config.threads, || {
        (0..exp.trials)
            .into_par_iter()
            .map(|t| run_trial(exp, t))
            .collect()
    })?;
    let ps: Vec<f64> = per_trial.iter().filter_map(|t| t.p_value).collect();
    let completed = ps.len();
    let rejections = per_trial.iter().filter(|t| t.rejected).count();
    let a = exp.alpha;
    Ok(ExperimentResult {
        kind: kind.to_string(),
        procedure: exp.procedure,
        calibration: exp.calibration,
        trials: exp.trials,
        completed,
        rejections,
        rejection_rate: if completed == 0 { 0.0 } else { rejections as f64 / completed as f64 },
        mean_p: if completed == 0 { f64::NAN } else { ps.iter().sum::<f64>() / completed as f64 },
        alpha: a,
        type1_upper_band: a + 2.0 * (a * (1.0 - a) / exp.trials as f64).sqrt(),
        master_seed: exp.spec.seed,
        per_trial,
    })
}

/// Rejection rate when the impermissible outcome is exchangeable with the
/// permissible ones. Refuses specs whose tested outcomes have different links.
pub fn type1_experiment(exp: &Experiment) -> Result<ExperimentResult, SimError> {
    check_experiment(exp)?;
    let imp = exp.spec.link(&exp.impermissible).expect("checked");
    for name in &exp.permissibles {
        let l = exp.spec.link(name).expect("checked");
        if l.slope != imp.slope || l.intercept != imp.intercept {
            return Err(SimError::NonExchangeableSpec {
                a: imp.name.clone(),
                b: l.name.clone(),
            });
        }
    }
    run_experiment(exp, "type1")
}

/// Rejection rate under a designed alternative.
pub fn power_experiment(exp: &Experiment) -> Result<ExperimentResult, SimError> {
    check_experiment(exp)?;
    run_experiment(exp, "power")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub calibrate: bool,
    pub loss_kind: LossKind,
    /// Mean Δ for one permissible outcome, R̄ otherwise.
    pub statistic: f64,
    pub p_value: f64,
    pub verdict: Verdict,
}

/// Runs the 2×2 grid {calibrate on, off} × {log loss, Brier}.
///
/// One permissible outcome uses the single-proxy test; more use the rank test.
/// Calibrate-off cells need probability-valued scores.
pub fn ablation_run(
    dataset: &EvalDataset,
    impermissible: &str,
    permissibles: &[String],
    base: &FalsificationConfig,
) -> Result<Vec<AblationRow>, SimError> {
    let mut rows = Vec::with_capacity(4);
    for calibrate in [false, true] {
        for loss_kind in [LossKind::LogLoss, LossKind::Brier] {
            let config = FalsificationConfig {
                calibrate,
                loss_kind,
                ..base.clone()
            };
            let source = CalibrationSource::from_config(&config);
            let (statistic, p_value, verdict) = if permissibles.len() == 1 {
                let r = run_single_proxy_with(dataset, &permissibles[0], impermissible, &config, &source)?;
                let d = r.diff_summary.as_ref().expect("single-proxy report has differences");
                // Zero differences add nothing to the sum, so rescale to all rows.
                (d.mean * d.n as f64 / r.n as f64, r.test.p_value, r.verdict)
            } else {
                let r = run_multi_proxy_with(dataset, permissibles, impermissible, &config, &source)?;
                (r.test.statistic, r.test.p_value, r.verdict)
            };
            rows.push(AblationRow {
                calibrate,
                loss_kind,
                statistic,
                p_value,
                verdict,
            });
        }
    }
    Ok(rows)
}

/// Ablation rows as CSV.
pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["calibration", "loss", "statistic", "p_value", "verdict"])?;
    for r in rows {
        out.write_record([
            if r.calibrate { "platt" } else { "none" }.to_string(),
            r.loss_kind.to_string(),
            r.statistic.to_string(),
            r.p_value.to_string(),
            r.verdict.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

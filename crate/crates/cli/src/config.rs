//! TOML files accepted by `--config`, `plan --plan` and `simulate --spec`.
//!
//! Keys mirror the long flags with `-` replaced by `_`. Command-line flags
//! override file values; unknown keys are rejected.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use discval::falsify::{FalsificationConfig, MultiProxyMode, SingleProxyMode};
use discval::loss::LossKind;
use discval::mht::Policy;
use discval::sim::{SimCalibration, SimProcedure, SyntheticSpec};
use discval::stats::WilcoxonMode;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Log,
    Brier,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Log => LossKind::LogLoss,
            LossArg::Brier => LossKind::Brier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Auto,
    T,
    Wilcoxon,
}

impl From<ModeArg> for SingleProxyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => SingleProxyMode::Auto,
            ModeArg::T => SingleProxyMode::TTest,
            ModeArg::Wilcoxon => SingleProxyMode::Wilcoxon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonArg {
    Auto,
    Exact,
    Normal,
}

impl From<WilcoxonArg> for WilcoxonMode {
    fn from(m: WilcoxonArg) -> Self {
        match m {
            WilcoxonArg::Auto => WilcoxonMode::Auto,
            WilcoxonArg::Exact => WilcoxonMode::Exact,
            WilcoxonArg::Normal => WilcoxonMode::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiModeArg {
    Perm,
    Normal,
}

impl From<MultiModeArg> for MultiProxyMode {
    fn from(m: MultiModeArg) -> Self {
        match m {
            MultiModeArg::Perm => MultiProxyMode::Permutation,
            MultiModeArg::Normal => MultiProxyMode::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn is_on(self) -> bool {
        self == OnOff::On
    }
}

/// A single name or a list of names.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Names {
    One(String),
    Many(Vec<String>),
}

impl Names {
    pub fn into_vec(self) -> Vec<String> {
        match self {
            Names::One(s) => vec![s],
            Names::Many(v) => v,
        }
    }
}

/// Test settings shared by flags, `--config` files and plan hypotheses.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    pub alpha: Option<f64>,
    pub loss: Option<LossArg>,
    pub mode: Option<ModeArg>,
    pub wilcoxon: Option<WilcoxonArg>,
    pub calibrate: Option<OnOff>,
    pub multi_mode: Option<MultiModeArg>,
    pub permutations: Option<usize>,
}

impl Knobs {
    /// Fields set in `self` win over `base`.
    pub fn or(&self, base: &Knobs) -> Knobs {
        Knobs {
            alpha: self.alpha.or(base.alpha),
            loss: self.loss.or(base.loss),
            mode: self.mode.or(base.mode),
            wilcoxon: self.wilcoxon.or(base.wilcoxon),
            calibrate: self.calibrate.or(base.calibrate),
            multi_mode: self.multi_mode.or(base.multi_mode),
            permutations: self.permutations.or(base.permutations),
        }
    }

    pub fn apply(&self, mut config: FalsificationConfig) -> FalsificationConfig {
        if let Some(a) = self.alpha {
            config.alpha = a;
        }
        if let Some(l) = self.loss {
            config.loss_kind = l.into();
        }
        if let Some(m) = self.mode {
            config.single_proxy_mode = m.into();
        }
        if let Some(w) = self.wilcoxon {
            config.wilcoxon_mode = w.into();
        }
        if let Some(c) = self.calibrate {
            config.calibrate = c.is_on();
        }
        if let Some(m) = self.multi_mode {
            config.multi_proxy_mode = m.into();
        }
        if let Some(b) = self.permutations {
            config.permutations = b;
        }
        config
    }
}

/// Contents of a `--config` file for `falsify-single`, `falsify-multi` and `metrics`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub score_col: Option<String>,
    pub role_col: Option<String>,
    pub cal_fraction: Option<f64>,
    pub permissible: Option<Names>,
    pub impermissible: Option<Names>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub export_losses: Option<bool>,
    pub k: Option<Vec<f64>>,
    pub true_tokens: Option<Vec<String>>,
    pub false_tokens: Option<Vec<String>>,
    pub alpha: Option<f64>,
    pub loss: Option<LossArg>,
    pub mode: Option<ModeArg>,
    pub wilcoxon: Option<WilcoxonArg>,
    pub calibrate: Option<OnOff>,
    pub multi_mode: Option<MultiModeArg>,
    pub permutations: Option<usize>,
}

impl FileConfig {
    pub fn knobs(&self) -> Knobs {
        Knobs {
            alpha: self.alpha,
            loss: self.loss,
            mode: self.mode,
            wilcoxon: self.wilcoxon,
            calibrate: self.calibrate,
            multi_mode: self.multi_mode,
            permutations: self.permutations,
        }
    }
}

/// One hypothesis; the knob fields override the plan's `[defaults]`. There is
/// no per-hypothesis `alpha` because the policy sets thresholds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisFile {
    pub label: String,
    pub impermissible: String,
    pub permissible: Names,
    /// Precomputed p-value; the test is then skipped.
    pub p_value: Option<f64>,
    pub loss: Option<LossArg>,
    pub mode: Option<ModeArg>,
    pub wilcoxon: Option<WilcoxonArg>,
    pub calibrate: Option<OnOff>,
    pub multi_mode: Option<MultiModeArg>,
    pub permutations: Option<usize>,
}

impl HypothesisFile {
    pub fn knobs(&self) -> Knobs {
        Knobs {
            alpha: None,
            loss: self.loss,
            mode: self.mode,
            wilcoxon: self.wilcoxon,
            calibrate: self.calibrate,
            multi_mode: self.multi_mode,
            permutations: self.permutations,
        }
    }
}

/// A pre-registered test plan.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub data: PathBuf,
    #[serde(default = "default_score_col")]
    pub score_col: String,
    pub role_col: Option<String>,
    pub cal_fraction: Option<f64>,
    pub seed: Option<u64>,
    /// Family-wise α.
    pub alpha: f64,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub defaults: Knobs,
    #[serde(rename = "hypothesis")]
    pub hypotheses: Vec<HypothesisFile>,
}

fn default_score_col() -> String {
    "score".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    Type1,
    Power,
    Ablation,
    /// Writes one generated dataset as CSV, without a split column.
    Dataset,
}

/// A simulation run: a Monte-Carlo experiment, or an ablation grid on one
/// generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub kind: SimKind,
    pub spec: SyntheticSpec,
    pub impermissible: String,
    pub permissibles: Vec<String>,
    pub procedure: Option<SimProcedure>,
    pub trials: Option<usize>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub calibration: SimCalibration,
    #[serde(default)]
    pub config: FalsificationConfig,
}

/// Reads and parses a TOML file; parse errors name the offending key.
pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config(format!("{}: not UTF-8", path.display())))?;
    let value = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
    Ok((value, bytes))
}

//! Family-wise error control for a pre-registered family of tests.
//!
//! Sequential policies test hypotheses in plan order at the nominal α until
//! the first non-rejection. From then on the m remaining hypotheses, counting
//! the one that just failed, are decided by Bonferroni or Holm over their
//! p-values. The failed hypothesis stays failed.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EvalDataset;
use crate::falsify::{
    run_multi_proxy, run_single_proxy, FalsificationConfig, FalsificationReport, FalsifyError,
};

#[derive(Debug, Error)]
pub enum MhtError {
    #[error("the plan contains no hypotheses")]
    EmptyPlan,
    #[error("hypothesis label `{0}` is used more than once")]
    DuplicateLabel(String),
    #[error("p-value {value} at position {index} is outside [0, 1]")]
    InvalidPValue { index: usize, value: f64 },
    #[error("family alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("hypothesis `{label}`: {source}")]
    Falsify {
        label: String,
        #[source]
        source: FalsifyError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    Bonferroni,
    Holm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    SequentialBonferroni,
    SequentialHolm,
    Bonferroni,
    Holm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Fail,
}

impl Decision {
    pub fn rejected(self) -> bool {
        self == Decision::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Tested at the nominal level.
    Nominal,
    /// Decided by the multiple-testing correction.
    Corrected,
}

/// One decided hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisDecision {
    pub label: String,
    pub p_value: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub family_alpha: f64,
    pub policy: Policy,
    /// Plan index of the first nominal non-rejection, if any.
    pub first_failure: Option<usize>,
    pub hypotheses: Vec<HypothesisDecision>,
}

impl PlanResult {
    pub fn decisions(&self) -> Vec<Decision> {
        self.hypotheses.iter().map(|h| h.decision).collect()
    }
}

fn check_inputs(pvalues: &[f64], alpha: f64) -> Result<(), MhtError> {
    if pvalues.is_empty() {
        return Err(MhtError::EmptyPlan);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MhtError::BadAlpha(alpha));
    }
    if let Some((index, &value)) = pvalues
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(MhtError::InvalidPValue { index, value });
    }
    Ok(())
}

/// Rejects each p ≤ α/m.
pub fn bonferroni(pvalues: &[f64], alpha: f64) -> Result<Vec<Decision>, MhtError> {
    Ok(bonferroni_thresholds(pvalues, alpha)?.0)
}

fn bonferroni_thresholds(pvalues: &[f64], alpha: f64) -> Result<(Vec<Decision>, Vec<f64>), MhtError> {
    check_inputs(pvalues, alpha)?;
    let t = alpha / pvalues.len() as f64;
    let decisions = pvalues
        .iter()
        .map(|&p| if p <= t { Decision::Reject } else { Decision::Fail })
        .collect();
    Ok((decisions, vec![t; pvalues.len()]))
}

/// Holm step-down. Equal p-values keep plan order.
pub fn holm(pvalues: &[f64], alpha: f64) -> Result<Vec<Decision>, MhtError> {
    Ok(holm_thresholds(pvalues, alpha)?.0)
}

fn holm_thresholds(pvalues: &[f64], alpha: f64) -> Result<(Vec<Decision>, Vec<f64>), MhtError> {
    check_inputs(pvalues, alpha)?;
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut decisions = vec![Decision::Fail; m];
    let mut thresholds = vec![0.0; m];
    let mut stopped = false;
    for (k, &i) in order.iter().enumerate() {
        let t = alpha / (m - k) as f64;
        thresholds[i] = t;
        if !stopped && pvalues[i] <= t {
            decisions[i] = Decision::Reject;
        } else {
            stopped = true;
        }
    }
    Ok((decisions, thresholds))
}

/// Tests in order at α; after the first failure applies `correction` to the
/// failed hypothesis and everything after it.
pub fn sequential_decide(
    pvalues: &[f64],
    alpha: f64,
    correction: Correction,
) -> Result<PlanResult, MhtError> {
    let labels: Vec<String> = (1..=pvalues.len()).map(|i| format!("H{i}")).collect();
    let policy = match correction {
        Correction::Bonferroni => Policy::SequentialBonferroni,
        Correction::Holm => Policy::SequentialHolm,
    };
    decide(&labels, pvalues, alpha, policy)
}

/// Applies a policy to labelled p-values in plan order.
pub fn decide(
    labels: &[String],
    pvalues: &[f64],
    alpha: f64,
    policy: Policy,
) -> Result<PlanResult, MhtError> {
    check_inputs(pvalues, alpha)?;
    assert_eq!(labels.len(), pvalues.len(), "one label per p-value");
    let entry = |i: usize, threshold: f64, decision: Decision, stage: Stage| HypothesisDecision {
        label: labels[i].clone(),
        p_value: pvalues[i],
        threshold,
        decision,
        stage,
    };
    let corrected = |ps: &[f64], c: Correction| match c {
        Correction::Bonferroni => bonferroni_thresholds(ps, alpha),
        Correction::Holm => holm_thresholds(ps, alpha),
    };

    let (hypotheses, first_failure) = match policy {
        Policy::Bonferroni | Policy::Holm => {
            let c = if policy == Policy::Holm {
                Correction::Holm
            } else {
                Correction::Bonferroni
            };
            let (d, t) = corrected(pvalues, c)?;
            let hs = (0..pvalues.len())
                .map(|i| entry(i, t[i], d[i], Stage::Corrected))
                .collect();
            (hs, None)
        }
        Policy::SequentialBonferroni | Policy::SequentialHolm => {
            let c = if policy == Policy::SequentialHolm {
                Correction::Holm
            } else {
                Correction::Bonferroni
            };
            let first = pvalues.iter().position(|&p| p > alpha);
            let mut hs: Vec<HypothesisDecision> = Vec::with_capacity(pvalues.len());
            let nominal_end = first.unwrap_or(pvalues.len());
            for i in 0..nominal_end {
                hs.push(entry(i, alpha, Decision::Reject, Stage::Nominal));
            }
            if let Some(k) = first {
                hs.push(entry(k, alpha, Decision::Fail, Stage::Nominal));
                let (d, t) = corrected(&pvalues[k..], c)?;
                for (off, i) in (k + 1..pvalues.len()).enumerate() {
                    hs.push(entry(i, t[off + 1], d[off + 1], Stage::Corrected));
                }
            }
            (hs, first)
        }
    };
    Ok(PlanResult {
        family_alpha: alpha,
        policy,
        first_failure,
        hypotheses,
    })
}

/// One pre-registered hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub label: String,
    pub impermissible: String,
    pub permissibles: Vec<String>,
    pub config: FalsificationConfig,
    /// Precomputed p-value; when set the test is not rerun.
    #[serde(default)]
    pub p_value: Option<f64>,
}

/// An ordered family of hypotheses, fixed before any p-value is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    alpha: f64,
    policy: Policy,
    hypotheses: Vec<Hypothesis>,
}

impl TestPlan {
    pub fn new(alpha: f64, policy: Policy, hypotheses: Vec<Hypothesis>) -> Result<Self, MhtError> {
        if hypotheses.is_empty() {
            return Err(MhtError::EmptyPlan);
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(MhtError::BadAlpha(alpha));
        }
        let mut seen = HashSet::new();
        for h in &hypotheses {
            if !seen.insert(h.label.as_str()) {
                return Err(MhtError::DuplicateLabel(h.label.clone()));
            }
        }
        Ok(Self {
            alpha,
            policy,
            hypotheses,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }
}

/// Result of running every hypothesis and applying the plan's policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExecution {
    pub result: PlanResult,
    /// Per-hypothesis reports; `None` where a p-value was supplied.
    pub reports: Vec<Option<FalsificationReport>>,
}

/// Computes every p-value (single-proxy for one permissible, rank test
/// otherwise), then decides the family.
pub fn execute_plan(plan: &TestPlan, dataset: &EvalDataset) -> Result<PlanExecution, MhtError> {
    let mut pvalues = Vec::with_capacity(plan.hypotheses.len());
    let mut reports = Vec::with_capacity(plan.hypotheses.len());
    for h in &plan.hypotheses {
        if let Some(p) = h.p_value {
            pvalues.push(p);
            reports.push(None);
            continue;
        }
        let run = if h.permissibles.len() == 1 {
            run_single_proxy(dataset, &h.permissibles[0], &h.impermissible, &h.config)
        } else {
            run_multi_proxy(dataset, &h.permissibles, &h.impermissible, &h.config)
        };
        let report = run.map_err(|source| MhtError::Falsify {
            label: h.label.clone(),
            source,
        })?;
        pvalues.push(report.test.p_value);
        reports.push(Some(report));
    }
    let labels: Vec<String> = plan.hypotheses.iter().map(|h| h.label.clone()).collect();
    Ok(PlanExecution {
        result: decide(&labels, &pvalues, plan.alpha, plan.policy)?,
        reports,
    })
}

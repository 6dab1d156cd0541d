//! Conventional evaluation metrics reported next to the falsification verdicts.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::Calibrator;
use crate::dataset::{DatasetError, EvalDataset, Role};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("labels contain a single class; metric undefined")]
    SingleClassLabels,
    #[error("k must lie in (0, 100], got {0}")]
    InvalidK(f64),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no records")]
    Empty,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("prediction for record {row} is not a probability: {value}")]
    NotProbability { row: usize, value: f64 },
    #[error("no prediction supplied for outcome `{0}`")]
    MissingPrediction(String),
    #[error("{0}")]
    Dataset(String),
}

impl From<DatasetError> for MetricsError {
    fn from(e: DatasetError) -> Self {
        MetricsError::Dataset(e.to_string())
    }
}

/// How AU-PR is computed; recorded in table metadata.
pub const AU_PR_METHOD: &str = "average_precision_step";
pub const DEFAULT_K_ADMISSIONS: [f64; 4] = [2.0, 10.0, 50.0, 75.0];
pub const DEFAULT_K_RISK: [f64; 2] = [10.0, 25.0];

fn check(scores: &[f64], labels: &[bool]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

fn check_both_classes(labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClassLabels);
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, ties by index.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Area under the ROC curve: P(s⁺ > s⁻) + ½·P(s⁺ = s⁻).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check(scores, labels)?;
    let (pos, neg) = check_both_classes(labels)?;
    // Rank-sum form with tie-averaged ranks, ascending.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: Σ over distinct thresholds of (Rₜ − Rₜ₋₁)·Pₜ.
pub fn au_pr(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check(scores, labels)?;
    let (pos, _) = check_both_classes(labels)?;
    let order = descending_order(scores);
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mean squared error of probability predictions.
pub fn mse(probabilities: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check(probabilities, labels)?;
    Ok(probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - y as u8 as f64).powi(2))
        .sum::<f64>()
        / probabilities.len() as f64)
}

/// Records flagged at `k` percent: the ⌈k·n/100⌉ highest scores, ties by index.
pub fn top_k_selection(scores: &[f64], k_percent: f64) -> Result<Vec<bool>, MetricsError> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(MetricsError::InvalidK(k_percent));
    }
    let n = scores.len();
    // The small offset keeps exact products like 10·50/100 from rounding up.
    let count = ((k_percent * n as f64 / 100.0 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    let mut selected = vec![false; n];
    for &i in descending_order(scores).iter().take(count) {
        selected[i] = true;
    }
    Ok(selected)
}

/// Fraction of positives among the top k percent.
pub fn ppv_at_top_k(scores: &[f64], labels: &[bool], k_percent: f64) -> Result<f64, MetricsError> {
    check(scores, labels)?;
    let sel = top_k_selection(scores, k_percent)?;
    let chosen = sel.iter().filter(|&&s| s).count();
    let hits = sel.iter().zip(labels).filter(|(&s, &y)| s && y).count();
    Ok(hits as f64 / chosen as f64)
}

/// Fraction of negatives left unflagged at k percent.
pub fn tnr_at_top_k(scores: &[f64], labels: &[bool], k_percent: f64) -> Result<f64, MetricsError> {
    check(scores, labels)?;
    let sel = top_k_selection(scores, k_percent)?;
    let negatives = labels.iter().filter(|&&y| !y).count();
    if negatives == 0 {
        return Err(MetricsError::SingleClassLabels);
    }
    let kept = sel.iter().zip(labels).filter(|(&s, &y)| !s && !y).count();
    Ok(kept as f64 / negatives as f64)
}

/// What the metrics are computed on.
#[derive(Debug, Clone)]
pub enum Predictions {
    /// Raw scores; MSE only when every score lies in [0, 1].
    Raw,
    /// Per-outcome calibrated probabilities.
    Calibrated(BTreeMap<String, Calibrator>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub outcome: String,
    pub role: Role,
    pub n: usize,
    pub auc: Option<f64>,
    pub au_pr: Option<f64>,
    pub mse: Option<f64>,
    pub ppv: Vec<AtK>,
    pub tnr: Vec<AtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub k_list: Vec<f64>,
    pub au_pr_method: String,
    /// "evaluation" when the dataset is split, "all" otherwise.
    pub records: String,
}

/// One row per declared outcome, over the evaluation split when present.
///
/// Metrics that are undefined for an outcome (e.g. a single label class) are `None`.
pub fn metric_table(
    dataset: &EvalDataset,
    predictions: &Predictions,
    k_list: &[f64],
) -> Result<MetricTable, MetricsError> {
    if let Some(&k) = k_list.iter().find(|&&k| !(k > 0.0 && k <= 100.0)) {
        return Err(MetricsError::InvalidK(k));
    }
    let (idx, records) = match dataset.split_roles() {
        Some(_) => (dataset.evaluation_indices()?, "evaluation"),
        None => ((0..dataset.len()).collect(), "all"),
    };
    if idx.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut rows = Vec::with_capacity(dataset.outcomes().len());
    for (j, spec) in dataset.outcomes().iter().enumerate() {
        let (scores, labels) = dataset.column(j, &idx);
        let (preds, probs) = match predictions {
            Predictions::Raw => {
                let probs = scores.iter().all(|s| (0.0..=1.0).contains(s));
                (scores, probs)
            }
            Predictions::Calibrated(map) => {
                let cal = map
                    .get(&spec.name)
                    .ok_or_else(|| MetricsError::MissingPrediction(spec.name.clone()))?;
                let p = scores
                    .iter()
                    .enumerate()
                    .map(|(r, &s)| {
                        cal.apply(s).ok_or(MetricsError::NotProbability {
                            row: idx[r] + 1,
                            value: s,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (p, true)
            }
        };
        let ppv = k_list
            .iter()
            .map(|&k| AtK {
                k,
                value: ppv_at_top_k(&preds, &labels, k).ok(),
            })
            .collect();
        let tnr = k_list
            .iter()
            .map(|&k| AtK {
                k,
                value: tnr_at_top_k(&preds, &labels, k).ok(),
            })
            .collect();
        rows.push(MetricRow {
            outcome: spec.name.clone(),
            role: spec.role,
            n: idx.len(),
            auc: auc(&preds, &labels).ok(),
            au_pr: au_pr(&preds, &labels).ok(),
            mse: if probs { mse(&preds, &labels).ok() } else { None },
            ppv,
            tnr,
        });
    }
    Ok(MetricTable {
        rows,
        k_list: k_list.to_vec(),
        au_pr_method: AU_PR_METHOD.to_string(),
        records: records.to_string(),
    })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.prec$}"))
}

fn role_flag(role: Role) -> &'static str {
    match role {
        Role::Permissible => "permissible",
        Role::Impermissible => "IMPERMISSIBLE",
    }
}

impl MetricTable {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["outcome", "role", "n", "auc", "au_pr", "mse"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.k_list.iter().map(|k| format!("ppv@{k}")));
        h.extend(self.k_list.iter().map(|k| format!("tnr@{k}")));
        h
    }

    fn cells(&self, prec: Option<usize>) -> Vec<Vec<String>> {
        let f = |v: Option<f64>| match prec {
            Some(p) => fmt_opt(v, p),
            None => v.map_or_else(|| "NA".to_string(), |x| x.to_string()),
        };
        self.rows
            .iter()
            .map(|r| {
                let mut c = vec![
                    r.outcome.clone(),
                    role_flag(r.role).to_string(),
                    r.n.to_string(),
                    f(r.auc),
                    f(r.au_pr),
                    f(r.mse),
                ];
                c.extend(r.ppv.iter().map(|a| f(a.value)));
                c.extend(r.tnr.iter().map(|a| f(a.value)));
                c
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for row in self.cells(None) {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Column-aligned text; impermissible rows carry an upper-case role flag.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let body = self.cells(Some(4));
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                body.iter()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut s = line(&header);
        s.push('\n');
        for r in &body {
            s.push_str(&line(r));
            s.push('\n');
        }
        s
    }
}

//! Per-record calibrated losses.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{Calibrator, PROB_EPS};
use crate::dataset::{DatasetError, EvalDataset};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("no calibration supplied for outcome `{0}`")]
    MissingCalibration(String),
    #[error("record {row}: score {score} is not a probability; identity calibration needs scores in [0, 1]")]
    ScoreNotProbability { row: usize, score: f64 },
    #[error("outcome `{0}` listed twice")]
    DuplicateOutcome(String),
    #[error("need one impermissible and at least one permissible outcome")]
    NoPermissible,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    LogLoss,
    Brier,
}

impl LossKind {
    pub fn eval(self, p: f64, y: bool) -> f64 {
        match self {
            LossKind::LogLoss => log_loss(p, y),
            LossKind::Brier => brier(p, y),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::LogLoss => "log_loss",
            LossKind::Brier => "brier",
        })
    }
}

/// Binary cross-entropy with p clamped to [ε, 1 − ε].
pub fn log_loss(p: f64, y: bool) -> f64 {
    // Work with the probability of the observed label, or its complement when
    // that is small, so the clamp applies exactly at either end.
    let q = if y { p } else { 1.0 - p };
    if q <= 0.5 {
        -q.max(PROB_EPS).ln()
    } else {
        let r = if y { 1.0 - p } else { p };
        -(-r.max(PROB_EPS)).ln_1p()
    }
}

/// Squared error (p − y)².
pub fn brier(p: f64, y: bool) -> f64 {
    let d = p - if y { 1.0 } else { 0.0 };
    d * d
}

/// n × (M+1) losses over evaluation records. Column 0 is the impermissible
/// outcome, columns 1..=M the permissible ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    values: Vec<f64>,
    n_cols: usize,
    outcomes: Vec<String>,
    record_ids: Vec<usize>,
    kind: LossKind,
}

impl LossMatrix {
    /// Column index of the impermissible outcome.
    pub const IMPERMISSIBLE: usize = 0;

    /// Builds directly from row-major values. Mostly for tests and the
    /// simulation harness.
    pub fn from_rows(rows: &[Vec<f64>], outcomes: Vec<String>, kind: LossKind) -> Self {
        let n_cols = outcomes.len();
        assert!(n_cols >= 2, "need the impermissible column plus at least one permissible");
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged loss rows");
        Self {
            values: rows.iter().flatten().copied().collect(),
            n_cols,
            outcomes,
            record_ids: (0..rows.len()).collect(),
            kind,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.record_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of permissible proxies, M.
    pub fn m(&self) -> usize {
        self.n_cols - 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    /// Dataset indices of the rows, in row order.
    pub fn record_ids(&self) -> &[usize] {
        &self.record_ids
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    /// Δᵢ = loss(impermissible) − loss(first permissible).
    pub fn differences(&self) -> Vec<f64> {
        self.rows().map(|r| r[0] - r[1]).collect()
    }

    /// Long-format CSV: `row_id,outcome,loss`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row_id,outcome,loss")?;
        for (row, &id) in self.rows().zip(&self.record_ids) {
            for (name, loss) in self.outcomes.iter().zip(row) {
                writeln!(w, "{id},{name},{loss}")?;
            }
        }
        Ok(())
    }
}

/// Computes losses on the evaluation split.
///
/// Entry (i, j) is `kind(calibrations[j].apply(score_i), label_ij)`; rows keep
/// dataset order.
pub fn build_loss_matrix(
    dataset: &EvalDataset,
    impermissible: &str,
    permissibles: &[String],
    calibrations: &BTreeMap<String, Calibrator>,
    kind: LossKind,
) -> Result<LossMatrix, LossError> {
    if permissibles.is_empty() {
        return Err(LossError::NoPermissible);
    }
    let mut outcomes = vec![impermissible.to_string()];
    for p in permissibles {
        if outcomes.contains(p) {
            return Err(LossError::DuplicateOutcome(p.clone()));
        }
        outcomes.push(p.clone());
    }
    let cols = outcomes
        .iter()
        .map(|name| {
            let j = dataset.outcome_index(name)?;
            let cal = calibrations
                .get(name)
                .ok_or_else(|| LossError::MissingCalibration(name.clone()))?;
            Ok((j, cal))
        })
        .collect::<Result<Vec<_>, LossError>>()?;

    let record_ids = dataset.evaluation_indices()?;
    let mut values = Vec::with_capacity(record_ids.len() * cols.len());
    for &i in &record_ids {
        let rec = &dataset.records()[i];
        for &(j, cal) in &cols {
            let p = cal.apply(rec.score).ok_or(LossError::ScoreNotProbability {
                row: i + 1,
                score: rec.score,
            })?;
            values.push(kind.eval(p, rec.labels[j]));
        }
    }
    Ok(LossMatrix {
        values,
        n_cols: cols.len(),
        outcomes,
        record_ids,
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::PlattParams;
    use crate::dataset::{EvalRecord, OutcomeSpec, SplitRole};

    #[test]
    fn log_loss_closed_forms() {
        assert!((log_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((log_loss(1.0, true) - 1e-12).abs() < 1e-20);
        assert!((log_loss(1.0, false) - 27.631021115928547).abs() < 1e-6);
        assert!((log_loss(0.0, true) - 27.631021115928547).abs() < 1e-6);
    }

    #[test]
    fn brier_closed_forms() {
        assert_eq!(brier(0.5, false), 0.25);
        assert_eq!(brier(1.0, true), 0.0);
        assert!((brier(0.9, false) - 0.81).abs() < 1e-15);
    }

    fn dataset(scores: &[f64], a: &[bool], b: &[bool]) -> EvalDataset {
        let n = scores.len();
        let records = (0..n)
            .map(|i| EvalRecord {
                score: scores[i],
                labels: vec![a[i], b[i]],
            })
            .collect();
        let mut split = vec![SplitRole::Evaluation; n];
        split.extend([SplitRole::Calibration; 2]);
        let mut records: Vec<EvalRecord> = records;
        records.push(EvalRecord { score: 0.5, labels: vec![true, true] });
        records.push(EvalRecord { score: 0.5, labels: vec![false, false] });
        EvalDataset::new(
            records,
            vec![OutcomeSpec::impermissible("imp"), OutcomeSpec::permissible("per")],
            Some(split),
        )
        .unwrap()
    }

    fn identity() -> BTreeMap<String, Calibrator> {
        [("imp", Calibrator::Identity), ("per", Calibrator::Identity)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    #[test]
    fn identity_probabilities() {
        let ds = dataset(&[0.5, 1.0], &[true, true], &[true, true]);
        let m = build_loss_matrix(&ds, "imp", &["per".into()], &identity(), LossKind::LogLoss)
            .unwrap();
        assert_eq!(m.n_rows(), 2);
        assert!((m.get(0, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((m.get(0, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(m.get(1, 0) < 1.000001e-12 && m.get(1, 1) < 1.000001e-12);
        assert_eq!(m.record_ids(), &[0, 1]);
    }

    #[test]
    fn three_records_match_hand_computation() {
        let ds = dataset(&[-1.0, 0.5, 2.0], &[true, false, true], &[false, false, true]);
        let mut cal = BTreeMap::new();
        let platt = |name: &str, a: f64, b: f64| {
            Calibrator::Platt(PlattParams {
                a,
                b,
                outcome: name.into(),
                n_fit: 2,
                smoothing_applied: true,
            })
        };
        cal.insert("imp".to_string(), platt("imp", -0.8, 0.2));
        cal.insert("per".to_string(), platt("per", 1.5, -0.3));
        let m = build_loss_matrix(&ds, "imp", &["per".into()], &cal, LossKind::LogLoss).unwrap();
        // Independent recomputation (python: -log(1/(1+exp(a*s+b))) etc.).
        let want = [
            [1.3132616875182228, 1.9529776105260748],
            [0.798138869381592, 0.49324894599745495],
            [0.22041740991845085, 2.7650435617765905],
        ];
        for i in 0..3 {
            for j in 0..2 {
                assert!((m.get(i, j) - want[i][j]).abs() < 1e-12, "({i},{j}) {}", m.get(i, j));
            }
        }
        let d = m.differences();
        assert!((d[0] - (want[0][0] - want[0][1])).abs() < 1e-12);
    }

    #[test]
    fn brier_entries_in_unit_interval() {
        let ds = dataset(&[0.0, 0.3, 0.99, 1.0], &[true, false, true, false], &[false, true, true, false]);
        let m = build_loss_matrix(&ds, "imp", &["per".into()], &identity(), LossKind::Brier).unwrap();
        assert!(m.rows().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn missing_calibration_and_bad_identity_scores() {
        let ds = dataset(&[0.2, 0.4], &[true, false], &[false, true]);
        let mut cal = identity();
        cal.remove("per");
        assert!(matches!(
            build_loss_matrix(&ds, "imp", &["per".into()], &cal, LossKind::Brier),
            Err(LossError::MissingCalibration(o)) if o == "per"
        ));
        let ds = dataset(&[0.2, 1.4], &[true, false], &[false, true]);
        assert!(matches!(
            build_loss_matrix(&ds, "imp", &["per".into()], &identity(), LossKind::Brier),
            Err(LossError::ScoreNotProbability { row: 2, .. })
        ));
    }

    #[test]
    fn csv_export() {
        let ds = dataset(&[0.5, 1.0], &[true, false], &[true, true]);
        let m = build_loss_matrix(&ds, "imp", &["per".into()], &identity(), LossKind::Brier).unwrap();
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap(), "row_id,outcome,loss");
        assert!(text.contains("1,imp,0.99999999999"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn label_probability_flip_symmetry(p in 0.0f64..=1.0, y in any::<bool>()) {
                for kind in [LossKind::LogLoss, LossKind::Brier] {
                    let a = kind.eval(p, y);
                    let b = kind.eval(1.0 - p, !y);
                    prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{kind}: {a} vs {b}");
                    prop_assert!(a >= 0.0 && a.is_finite());
                }
                prop_assert!(log_loss(p, y) <= -PROB_EPS.ln() + 1e-9);
            }
        }
    }
}

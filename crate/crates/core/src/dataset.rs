//! Evaluation data: one model score per record plus binary outcome labels.
//!
//! Records carry a raw score from an already-trained model and one label per
//! declared outcome. Each outcome is tagged permissible or impermissible. A
//! dataset is split once into a calibration part (Platt fitting only) and an
//! evaluation part (all tests).

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("record {row}: column `{column}` has non-binary label `{value}`")]
    NonBinaryLabel {
        row: usize,
        column: String,
        value: String,
    },
    #[error("record {row}: score `{value}` is not a finite number")]
    NonFiniteScore { row: usize, value: String },
    #[error("record {row}: column `{column}` is empty")]
    MissingCell { row: usize, column: String },
    #[error("record {row}: unknown split role `{value}` (expected calibration or evaluation)")]
    BadSplitRole { row: usize, value: String },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("no outcome columns declared")]
    NoOutcomes,
    #[error("outcome `{0}` declared more than once")]
    DuplicateOutcome(String),
    #[error("split too small: {calibration} calibration / {evaluation} evaluation records (need at least 2 each)")]
    SplitTooSmall {
        calibration: usize,
        evaluation: usize,
    },
    #[error("calibration fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("outcome `{0}` has a single label value in the calibration split")]
    DegenerateCalibrationLabels(String),
    #[error("dataset has not been split into calibration and evaluation records")]
    NotSplit,
    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),
    #[error("record/label shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Permissible,
    Impermissible,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Permissible => f.write_str("permissible"),
            Role::Impermissible => f.write_str("impermissible"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub name: String,
    pub role: Role,
}

impl OutcomeSpec {
    pub fn permissible(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role: Role::Permissible,
        }
    }

    pub fn impermissible(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role: Role::Impermissible,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Calibration,
    Evaluation,
}

/// One scored record. `labels[j]` belongs to the dataset's `j`-th outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub score: f64,
    pub labels: Vec<bool>,
}

/// Label parsing and pre-split options for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Tokens read as label 1 (case-insensitive).
    pub true_tokens: Vec<String>,
    /// Tokens read as label 0 (case-insensitive).
    pub false_tokens: Vec<String>,
    /// Optional column holding `calibration` / `evaluation` per row.
    pub role_column: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            true_tokens: vec!["1".into(), "true".into()],
            false_tokens: vec!["0".into(), "false".into()],
            role_column: None,
        }
    }
}

impl CsvOptions {
    fn parse_label(&self, raw: &str) -> Option<bool> {
        let t = raw.trim();
        if self.true_tokens.iter().any(|k| k.eq_ignore_ascii_case(t)) {
            Some(true)
        } else if self.false_tokens.iter().any(|k| k.eq_ignore_ascii_case(t)) {
            Some(false)
        } else {
            None
        }
    }
}

/// Validated evaluation data. Immutable once built; `split` returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDataset {
    records: Vec<EvalRecord>,
    outcomes: Vec<OutcomeSpec>,
    split: Option<Vec<SplitRole>>,
}

impl EvalDataset {
    /// Builds a dataset from in-memory records, applying the same checks as CSV ingestion.
    pub fn new(
        records: Vec<EvalRecord>,
        outcomes: Vec<OutcomeSpec>,
        split: Option<Vec<SplitRole>>,
    ) -> Result<Self, DatasetError> {
        check_outcomes(&outcomes)?;
        if records.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        for (i, r) in records.iter().enumerate() {
            if !r.score.is_finite() {
                return Err(DatasetError::NonFiniteScore {
                    row: i + 1,
                    value: r.score.to_string(),
                });
            }
            if r.labels.len() != outcomes.len() {
                return Err(DatasetError::Shape(format!(
                    "record {} has {} labels for {} outcomes",
                    i + 1,
                    r.labels.len(),
                    outcomes.len()
                )));
            }
        }
        if let Some(s) = &split {
            if s.len() != records.len() {
                return Err(DatasetError::Shape(format!(
                    "{} split roles for {} records",
                    s.len(),
                    records.len()
                )));
            }
        }
        let ds = Self {
            records,
            outcomes,
            split,
        };
        if ds.split.is_some() {
            ds.validate_split()?;
        }
        Ok(ds)
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn outcomes(&self) -> &[OutcomeSpec] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_roles(&self) -> Option<&[SplitRole]> {
        self.split.as_deref()
    }

    pub fn outcome_index(&self, name: &str) -> Result<usize, DatasetError> {
        self.outcomes
            .iter()
            .position(|o| o.name == name)
            .ok_or_else(|| DatasetError::UnknownOutcome(name.to_string()))
    }

    /// Record indices with the given split role, in dataset order.
    pub fn indices(&self, role: SplitRole) -> Result<Vec<usize>, DatasetError> {
        let split = self.split.as_ref().ok_or(DatasetError::NotSplit)?;
        Ok(split
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn calibration_indices(&self) -> Result<Vec<usize>, DatasetError> {
        self.indices(SplitRole::Calibration)
    }

    pub fn evaluation_indices(&self) -> Result<Vec<usize>, DatasetError> {
        self.indices(SplitRole::Evaluation)
    }

    /// Scores and one outcome's labels over the given records.
    pub fn column(&self, outcome: usize, idx: &[usize]) -> (Vec<f64>, Vec<bool>) {
        idx.iter()
            .map(|&i| (self.records[i].score, self.records[i].labels[outcome]))
            .unzip()
    }

    /// Assigns calibration/evaluation roles at random.
    ///
    /// Exactly `round(fraction * n)` records go to calibration. The assignment
    /// depends only on `(n, fraction, seed)`.
    pub fn split(&self, calibration_fraction: f64, seed: u64) -> Result<Self, DatasetError> {
        if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
            return Err(DatasetError::BadFraction(calibration_fraction));
        }
        let n = self.records.len();
        let n_cal = (calibration_fraction * n as f64).round() as usize;
        if n_cal < 2 || n - n_cal < 2 {
            return Err(DatasetError::SplitTooSmall {
                calibration: n_cal,
                evaluation: n.saturating_sub(n_cal),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut roles = vec![SplitRole::Evaluation; n];
        for &i in &order[..n_cal] {
            roles[i] = SplitRole::Calibration;
        }
        let ds = Self {
            records: self.records.clone(),
            outcomes: self.outcomes.clone(),
            split: Some(roles),
        };
        ds.validate_split()?;
        Ok(ds)
    }

    /// Checks split sizes and that every outcome has both labels among calibration records.
    pub fn validate_split(&self) -> Result<(), DatasetError> {
        let cal = self.calibration_indices()?;
        let n_eval = self.records.len() - cal.len();
        if cal.len() < 2 || n_eval < 2 {
            return Err(DatasetError::SplitTooSmall {
                calibration: cal.len(),
                evaluation: n_eval,
            });
        }
        for (j, o) in self.outcomes.iter().enumerate() {
            let ones = cal.iter().filter(|&&i| self.records[i].labels[j]).count();
            if ones == 0 || ones == cal.len() {
                return Err(DatasetError::DegenerateCalibrationLabels(o.name.clone()));
            }
        }
        Ok(())
    }

    /// SHA-256 over a canonical encoding of outcomes, scores, labels and split roles.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for o in &self.outcomes {
            h.update(o.name.as_bytes());
            h.update([0u8, o.role as u8]);
        }
        for (i, r) in self.records.iter().enumerate() {
            h.update(r.score.to_bits().to_le_bytes());
            let bits: Vec<u8> = r.labels.iter().map(|&b| b as u8).collect();
            h.update(&bits);
            let role = match self.split.as_ref().map(|s| s[i]) {
                None => 0u8,
                Some(SplitRole::Calibration) => 1,
                Some(SplitRole::Evaluation) => 2,
            };
            h.update([role]);
        }
        hex::encode(h.finalize())
    }
}

impl EvalDataset {
    /// Writes `score_col`, one 0/1 column per outcome and, when split, a
    /// `split` column readable through [`CsvOptions::role_column`].
    pub fn write_csv<W: std::io::Write>(&self, w: W, score_col: &str) -> Result<(), DatasetError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![score_col.to_string()];
        header.extend(self.outcomes.iter().map(|o| o.name.clone()));
        if self.split.is_some() {
            header.push("split".into());
        }
        out.write_record(&header)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut row = vec![r.score.to_string()];
            row.extend(r.labels.iter().map(|&y| if y { "1" } else { "0" }.to_string()));
            if let Some(split) = &self.split {
                row.push(
                    match split[i] {
                        SplitRole::Calibration => "calibration",
                        SplitRole::Evaluation => "evaluation",
                    }
                    .into(),
                );
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_outcomes(outcomes: &[OutcomeSpec]) -> Result<(), DatasetError> {
    if outcomes.is_empty() {
        return Err(DatasetError::NoOutcomes);
    }
    let mut seen = HashSet::new();
    for o in outcomes {
        if !seen.insert(o.name.as_str()) {
            return Err(DatasetError::DuplicateOutcome(o.name.clone()));
        }
    }
    Ok(())
}

/// Loads a CSV file with default label tokens and no role column.
pub fn load_csv(
    path: impl AsRef<Path>,
    score_col: &str,
    outcomes: &[OutcomeSpec],
) -> Result<EvalDataset, DatasetError> {
    load_csv_with(path, score_col, outcomes, &CsvOptions::default())
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    score_col: &str,
    outcomes: &[OutcomeSpec],
    options: &CsvOptions,
) -> Result<EvalDataset, DatasetError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    read_csv(buf.as_slice(), score_col, outcomes, options)
}

/// Parses CSV from any reader. Lines starting with `#` are skipped. Row
/// order is preserved; any empty cell in a
/// used column is an error.
pub fn read_csv<R: Read>(
    reader: R,
    score_col: &str,
    outcomes: &[OutcomeSpec],
    options: &CsvOptions,
) -> Result<EvalDataset, DatasetError> {
    check_outcomes(outcomes)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let score_at = find(score_col)?;
    let label_at = outcomes
        .iter()
        .map(|o| find(&o.name))
        .collect::<Result<Vec<_>, _>>()?;
    let role_at = options.role_column.as_deref().map(find).transpose()?;

    let mut records = Vec::new();
    let mut roles = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let rownum = i + 1;
        let cell = |at: usize, name: &str| -> Result<&str, DatasetError> {
            match row.get(at).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DatasetError::MissingCell {
                    row: rownum,
                    column: name.to_string(),
                }),
            }
        };
        let raw = cell(score_at, score_col)?;
        let score: f64 = match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                return Err(DatasetError::NonFiniteScore {
                    row: rownum,
                    value: raw.to_string(),
                })
            }
        };
        let mut labels = Vec::with_capacity(outcomes.len());
        for (o, &at) in outcomes.iter().zip(&label_at) {
            let raw = cell(at, &o.name)?;
            let y = options
                .parse_label(raw)
                .ok_or_else(|| DatasetError::NonBinaryLabel {
                    row: rownum,
                    column: o.name.clone(),
                    value: raw.to_string(),
                })?;
            labels.push(y);
        }
        if let (Some(at), Some(name)) = (role_at, options.role_column.as_deref()) {
            let raw = cell(at, name)?;
            let role = match raw.to_ascii_lowercase().as_str() {
                "calibration" => SplitRole::Calibration,
                "evaluation" => SplitRole::Evaluation,
                _ => {
                    return Err(DatasetError::BadSplitRole {
                        row: rownum,
                        value: raw.to_string(),
                    })
                }
            };
            roles.push(role);
        }
        records.push(EvalRecord { score, labels });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let split = role_at.map(|_| roles);
    EvalDataset::new(records, outcomes.to_vec(), split)
}

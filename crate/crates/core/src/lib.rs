//! Discriminant-validity falsification for predictive scores.
//!
//! A score intended to predict some construct should predict its permissible
//! proxies better than an impermissible one. The procedures here test that,
//! returning DISCRIMINANT when the data show it and an inconclusive
//! INDISCRIMINANT otherwise.
//!
//! ```no_run
//! use discval::dataset::{load_csv, OutcomeSpec};
//! use discval::falsify::{run_single_proxy, FalsificationConfig};
//!
//! let outcomes = [OutcomeSpec::permissible("gpa"), OutcomeSpec::impermissible("race")];
//! let ds = load_csv("scores.csv", "score", &outcomes)?.split(0.5, 7)?;
//! let report = run_single_proxy(&ds, "gpa", "race", &FalsificationConfig::default())?;
//! println!("{} (p = {})", report.verdict_label, report.test.p_value);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod calibration;
pub mod dataset;
pub mod falsify;
pub mod loss;
pub mod metrics;
pub mod mht;
pub mod seeds;
pub mod sim;
pub mod stats;

use thiserror::Error;

/// Broad error class, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data, configuration or usage.
    Input,
    /// A computation could not produce a result.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Calibration(#[from] calibration::CalibrationError),
    #[error(transparent)]
    Loss(#[from] loss::LossError),
    #[error(transparent)]
    Stat(#[from] stats::StatError),
    #[error(transparent)]
    Falsify(#[from] falsify::FalsifyError),
    #[error(transparent)]
    Mht(#[from] mht::MhtError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}

fn class_of_calibration(e: &calibration::CalibrationError) -> ErrorClass {
    use calibration::CalibrationError as C;
    match e {
        C::NoConvergence { .. } => ErrorClass::Numeric,
        _ => ErrorClass::Input,
    }
}

fn class_of_falsify(e: &falsify::FalsifyError) -> ErrorClass {
    use falsify::FalsifyError as F;
    match e {
        F::Stat(_) | F::RankInvariant { .. } | F::ThreadPool(_) => ErrorClass::Numeric,
        F::Calibration { source, .. } => class_of_calibration(source),
        _ => ErrorClass::Input,
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Stat(_) => ErrorClass::Numeric,
            Error::Calibration(e) => class_of_calibration(e),
            Error::Falsify(e) => class_of_falsify(e),
            Error::Mht(mht::MhtError::Falsify { source, .. }) => class_of_falsify(source),
            Error::Sim(sim::SimError::Falsify(e)) => class_of_falsify(e),
            _ => ErrorClass::Input,
        }
    }

    /// Stable machine-readable name of the innermost error.
    pub fn kind(&self) -> String {
        fn variant<T: std::fmt::Debug>(e: &T) -> String {
            let s = format!("{e:?}");
            s.split(|c: char| !c.is_alphanumeric() && c != '_')
                .next()
                .unwrap_or_default()
                .to_string()
        }
        use falsify::FalsifyError as F;
        let inner_falsify = |e: &F| match e {
            F::Stat(s) => variant(s),
            F::Dataset(d) => variant(d),
            F::Loss(l) => variant(l),
            F::Calibration { source, .. } => variant(source),
            other => variant(other),
        };
        match self {
            Error::Dataset(e) => variant(e),
            Error::Calibration(e) => variant(e),
            Error::Loss(e) => variant(e),
            Error::Stat(e) => variant(e),
            Error::Falsify(e) => inner_falsify(e),
            Error::Mht(mht::MhtError::Falsify { source, .. }) => inner_falsify(source),
            Error::Mht(e) => variant(e),
            Error::Metrics(e) => variant(e),
            Error::Sim(sim::SimError::Falsify(e)) => inner_falsify(e),
            Error::Sim(e) => variant(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_errors_are_classified() {
        let e: Error = falsify::FalsifyError::from(stats::StatError::AllZeroDifferences).into();
        assert_eq!(e.class(), ErrorClass::Numeric);
        assert_eq!(e.kind(), "AllZeroDifferences");
        let e: Error = falsify::FalsifyError::PermutationBudgetTooSmall(10).into();
        assert_eq!(e.class(), ErrorClass::Input);
        assert_eq!(e.kind(), "PermutationBudgetTooSmall");
    }
}

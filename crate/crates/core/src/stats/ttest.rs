use super::{check_finite, student_t_sf, Method, StatError, TestResult};

/// One-sample t-test of H0: E[Δ] ≤ 0 against H1: E[Δ] > 0.
pub fn t_test_one_sided_greater(diffs: &[f64]) -> Result<TestResult, StatError> {
    let n = diffs.len();
    if n < 2 {
        return Err(StatError::TooFewSamples { needed: 2, got: n });
    }
    check_finite(diffs)?;
    if diffs.iter().all(|&d| d == diffs[0]) {
        return Err(StatError::DegenerateVariance);
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let ss: f64 = diffs.iter().map(|d| (d - mean) * (d - mean)).sum();
    let sd = (ss / (nf - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(StatError::DegenerateVariance);
    }
    let t = mean / (sd / nf.sqrt());
    Ok(TestResult {
        statistic: t,
        p_value: student_t_sf(t, nf - 1.0).clamp(0.0, 1.0),
        method: Method::TTest,
        n_effective: n,
        notes: vec![format!("mean difference {mean}, sd {sd}, df {}", n - 1)],
    })
}

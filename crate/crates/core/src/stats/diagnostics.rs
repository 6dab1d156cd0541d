//! Screens deciding between the t-test and the signed-rank test.

use serde::{Deserialize, Serialize};

use super::StatError;

/// Below this size normality is reported as not assessed.
pub const NORMALITY_MIN_N: usize = 20;
const NORMALITY_LEVEL: f64 = 0.05;

/// D'Agostino–Pearson K² omnibus result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Normality {
    Assessed { statistic: f64, p_value: f64 },
    NotAssessed,
}

impl Normality {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            Normality::Assessed { p_value, .. } => Some(*p_value),
            Normality::NotAssessed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    TTest,
    Wilcoxon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub normality_p: Option<f64>,
    pub n_outliers: usize,
    pub recommendation: Recommendation,
}

/// K² = Z(skewness)² + Z(kurtosis)², referred to χ² with 2 df.
pub fn normality_check(xs: &[f64]) -> Normality {
    let n = xs.len();
    if n < NORMALITY_MIN_N || xs.iter().any(|x| !x.is_finite()) {
        return Normality::NotAssessed;
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Normality::NotAssessed;
    }
    let zs = skew_z(m3 / m2.powf(1.5), nf);
    let zk = kurtosis_z(m4 / (m2 * m2), nf);
    let k2 = zs * zs + zk * zk;
    if !k2.is_finite() {
        return Normality::NotAssessed;
    }
    Normality::Assessed {
        statistic: k2,
        p_value: (-k2 / 2.0).exp(),
    }
}

fn skew_z(b1: f64, n: f64) -> f64 {
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let r = y / alpha;
    delta * (r + (r * r + 1.0).sqrt()).ln()
}

fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0
        + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return f64::NAN;
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// Quantile with linear interpolation between order statistics, position `(n−1)·q`.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Number of points outside the Tukey fences [Q1 − 1.5·IQR, Q3 + 1.5·IQR].
pub fn outlier_check(xs: &[f64]) -> Result<usize, StatError> {
    if xs.len() < 4 {
        return Err(StatError::TooFewSamples {
            needed: 4,
            got: xs.len(),
        });
    }
    super::check_finite(xs)?;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let q3 = quantile_linear(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    Ok(xs.iter().filter(|&&x| x < lo || x > hi).count())
}

/// Recommends the t-test only for n ≥ 20 with normality not rejected at 0.05
/// and no Tukey outliers.
pub fn diagnose(xs: &[f64]) -> DiagnosticReport {
    let normality_p = normality_check(xs).p_value();
    let n_outliers = outlier_check(xs).unwrap_or(0);
    let normal_ok = normality_p.is_some_and(|p| p > NORMALITY_LEVEL);
    let recommendation = if normal_ok && n_outliers == 0 && xs.len() >= NORMALITY_MIN_N {
        Recommendation::TTest
    } else {
        Recommendation::Wilcoxon
    };
    DiagnosticReport {
        normality_p,
        n_outliers,
        recommendation,
    }
}

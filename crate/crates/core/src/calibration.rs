//! Per-outcome Platt scaling.
//!
//! The sigmoid is stored as P(y = 1 | s) = 1 / (1 + exp(a·s + b)), so a score
//! that rises with the outcome fits `a < 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability clamp applied at apply-time so log loss stays finite.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least 2 records to fit, got {0}")]
    TooFewRecords(usize),
    #[error("labels contain a single class")]
    SingleClassLabels,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("Platt fit did not converge in {max_iter} iterations (last a = {a}, b = {b}, |grad| = {grad_norm:e})")]
    NoConvergence {
        max_iter: usize,
        a: f64,
        b: f64,
        grad_norm: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlattOptions {
    /// Replace 0/1 targets with Platt's smoothed targets.
    pub smoothing: bool,
    pub max_iter: usize,
    /// Convergence threshold on the Euclidean norm of the mean-NLL gradient.
    pub tol: f64,
}

impl Default for PlattOptions {
    fn default() -> Self {
        Self {
            smoothing: true,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
    pub outcome: String,
    pub n_fit: usize,
    pub smoothing_applied: bool,
}

impl PlattParams {
    pub fn apply(&self, score: f64) -> f64 {
        apply_platt(self.a, self.b, score)
    }
}

/// 1 / (1 + exp(a·s + b)), clamped to [ε, 1 − ε].
pub fn apply_platt(a: f64, b: f64, score: f64) -> f64 {
    let z = a * score + b;
    let p = if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// How raw scores become probabilities for one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibrator {
    Platt(PlattParams),
    /// Scores are already probabilities; only the ε clamp is applied.
    Identity,
}

impl Calibrator {
    /// `None` when the identity calibrator sees a score outside [0, 1].
    pub fn apply(&self, score: f64) -> Option<f64> {
        match self {
            Calibrator::Platt(p) => Some(p.apply(score)),
            Calibrator::Identity if (0.0..=1.0).contains(&score) => {
                Some(score.clamp(PROB_EPS, 1.0 - PROB_EPS))
            }
            Calibrator::Identity => None,
        }
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Negative log-likelihood of targets `t` under p = 1/(1+exp(a·s+b)).
fn nll(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let z = a * s + b;
            // −[t·ln p + (1−t)·ln(1−p)] with ln p = −softplus(z), ln(1−p) = −softplus(−z)
            t * softplus(z) + (1.0 - t) * softplus(-z)
        })
        .sum()
}

/// Maximum-likelihood Platt fit by damped Newton iteration.
pub fn fit_platt(
    outcome: &str,
    scores: &[f64],
    labels: &[bool],
    options: &PlattOptions,
) -> Result<PlattParams, CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n = scores.len();
    if n < 2 {
        return Err(CalibrationError::TooFewRecords(n));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CalibrationError::SingleClassLabels);
    }
    let (t_pos, t_neg) = if options.smoothing {
        (
            (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0),
            1.0 / (n_neg as f64 + 2.0),
        )
    } else {
        (1.0, 0.0)
    };
    let targets: Vec<f64> = labels
        .iter()
        .map(|&y| if y { t_pos } else { t_neg })
        .collect();
    let nf = n as f64;
    let constant_scores = scores.iter().all(|&s| s == scores[0]);

    // Without smoothing, separated classes have no finite maximizer.
    let separated = !constant_scores && !options.smoothing && {
        let extent = |want: bool| {
            scores
                .iter()
                .zip(labels)
                .filter(|(_, &y)| y == want)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&s, _)| {
                    (lo.min(s), hi.max(s))
                })
        };
        let (pos_lo, pos_hi) = extent(true);
        let (neg_lo, neg_hi) = extent(false);
        pos_lo >= neg_hi || neg_lo >= pos_hi
    };
    let finish = |a: f64, b: f64, grad_norm: f64| {
        if separated {
            Err(CalibrationError::NoConvergence {
                max_iter: options.max_iter,
                a,
                b,
                grad_norm,
            })
        } else {
            Ok(PlattParams {
                a,
                b,
                outcome: outcome.to_string(),
                n_fit: n,
                smoothing_applied: options.smoothing,
            })
        }
    };

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut f = nll(scores, &targets, a, b);
    for _ in 0..options.max_iter {
        // ∂NLL/∂z = t − p, ∂²NLL/∂z² = p(1 − p)
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = sigmoid_neg(a * s + b);
            let g = t - p;
            let w = p * (1.0 - p);
            ga += g * s;
            gb += g;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        if constant_scores {
            ga = 0.0;
        }
        let grad_norm = (ga * ga + gb * gb).sqrt() / nf;
        if grad_norm < options.tol {
            return finish(a, b, grad_norm);
        }
        let (da, db) = if constant_scores {
            (0.0, -gb / hbb.max(f64::MIN_POSITIVE))
        } else {
            let det = haa * hbb - hab * hab;
            if det > 1e-300 * (haa * hbb).max(1.0) {
                (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
            } else {
                // Hessian numerically singular: fall back to steepest descent.
                (-ga / nf, -gb / nf)
            }
        };
        // Near the optimum objective changes fall below rounding, so a line
        // search cannot rank candidates; take the full Newton step there.
        let decrement = -(ga * da + gb * db);
        if decrement >= 0.0 && decrement <= 1e-10 * f.max(1.0) {
            a += da;
            b += db;
            f = nll(scores, &targets, a, b);
            continue;
        }
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf_val = nll(scores, &targets, na, nb);
            if nf_val <= f {
                a = na;
                b = nb;
                f = nf_val;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable decrease left: converged to working precision
            // when the Newton decrement is at rounding level of the objective.
            if decrement.abs() <= 1e-12 * f.max(1.0) {
                return finish(a, b, grad_norm);
            }
            return Err(CalibrationError::NoConvergence {
                max_iter: options.max_iter,
                a,
                b,
                grad_norm,
            });
        }
    }
    let (ga, gb) = mean_gradient(scores, &targets, a, b);
    let grad_norm = if constant_scores { gb.abs() } else { ga.hypot(gb) };
    if grad_norm < options.tol {
        return finish(a, b, grad_norm);
    }
    Err(CalibrationError::NoConvergence {
        max_iter: options.max_iter,
        a,
        b,
        grad_norm,
    })
}

/// Unclamped 1 / (1 + exp(z)).
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn mean_gradient(scores: &[f64], targets: &[f64], a: f64, b: f64) -> (f64, f64) {
    let n = scores.len() as f64;
    let (ga, gb) = scores
        .iter()
        .zip(targets)
        .fold((0.0, 0.0), |(ga, gb), (&s, &t)| {
            let g = t - sigmoid_neg(a * s + b);
            (ga + g * s, gb + g)
        });
    (ga / n, gb / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn draw(n: usize, a: f64, b: f64, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s: f64 = StandardNormal.sample(&mut rng);
                let p = 1.0 / (1.0 + (a * s + b).exp());
                (s, rng.random::<f64>() < p)
            })
            .unzip()
    }

    #[test]
    fn apply_closed_forms() {
        for s in [-40.0, -1.0, 0.0, 3.3, 1e6] {
            assert_eq!(apply_platt(0.0, 0.0, s), 0.5);
            assert!((apply_platt(0.0, 3f64.ln(), s) - 0.25).abs() < 1e-15);
        }
        assert_eq!(apply_platt(-1.0, 0.0, 0.0), 0.5);
        assert!(apply_platt(-1.0, 0.0, 50.0) > 1.0 - 1e-11);
        assert!(apply_platt(-1.0, 0.0, 1.0) > apply_platt(-1.0, 0.0, 0.5));
        assert_eq!(apply_platt(-1.0, 0.0, 1e9), 1.0 - PROB_EPS);
        assert_eq!(apply_platt(-1.0, 0.0, -1e9), PROB_EPS);
    }

    #[test]
    fn recovers_generating_parameters() {
        let (s, y) = draw(10_000, 2.0, -1.0, 11);
        let opts = PlattOptions {
            smoothing: false,
            ..Default::default()
        };
        let p = fit_platt("y", &s, &y, &opts).unwrap();
        assert!((p.a - 2.0).abs() < 0.05, "a = {}", p.a);
        assert!((p.b + 1.0).abs() < 0.05, "b = {}", p.b);
        assert!(!p.smoothing_applied);
    }

    #[test]
    fn independent_labels_give_flat_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<bool> = (0..20_000).map(|_| rng.random::<f64>() < 0.3).collect();
        let p = fit_platt("y", &s, &y, &PlattOptions::default()).unwrap();
        assert!(p.a.abs() < 0.05);
        let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        for x in [-2.0, 0.0, 2.0] {
            assert!((p.apply(x) - rate).abs() < 0.03);
        }
    }

    #[test]
    fn separable_scores_stay_finite_with_smoothing() {
        let s: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let p = fit_platt("y", &s, &y, &PlattOptions::default()).unwrap();
        assert!(p.a.is_finite() && p.b.is_finite());
        assert!(p.a < 0.0);
    }

    #[test]
    fn separable_scores_without_smoothing_do_not_converge() {
        let s: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let opts = PlattOptions {
            smoothing: false,
            ..Default::default()
        };
        assert!(matches!(
            fit_platt("y", &s, &y, &opts),
            Err(CalibrationError::NoConvergence { .. })
        ));
    }

    #[test]
    fn contract_errors() {
        let o = PlattOptions::default();
        assert_eq!(
            fit_platt("y", &[1.0, 2.0], &[true, true], &o).unwrap_err(),
            CalibrationError::SingleClassLabels
        );
        assert!(fit_platt("y", &[1.0], &[true], &o).is_err());
        assert!(fit_platt("y", &[1.0, 2.0], &[true], &o).is_err());
    }

    #[test]
    fn constant_scores_fit_the_intercept_only() {
        let s = vec![0.7; 10];
        let y: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let p = fit_platt("y", &s, &y, &PlattOptions::default()).unwrap();
        assert_eq!(p.a, 0.0);
        // smoothed base rate: (3·(4/5) + 7·(1/9)) / 10
        let want = (3.0 * 0.8 + 7.0 / 9.0) / 10.0;
        assert!((p.apply(0.7) - want).abs() < 1e-9);
    }

    #[test]
    fn beats_best_constant_predictor() {
        for seed in 0..5 {
            let (s, y) = draw(300, -1.2, 0.4, seed);
            let p = fit_platt("y", &s, &y, &PlattOptions { smoothing: false, ..Default::default() })
                .unwrap();
            let rate = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
            let ll = |q: &dyn Fn(f64) -> f64| -> f64 {
                s.iter()
                    .zip(&y)
                    .map(|(&x, &t)| {
                        let q = q(x);
                        if t { -q.ln() } else { -(1.0 - q).ln() }
                    })
                    .sum::<f64>()
            };
            assert!(ll(&|x| p.apply(x)) <= ll(&|_| rate) + 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn order_invariant(seed in any::<u64>(), rot in 1usize..199) {
                let (s, y) = draw(200, -1.5, 0.3, seed);
                prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
                let o = PlattOptions::default();
                let p = fit_platt("y", &s, &y, &o).unwrap();
                let mut s2 = s.clone();
                let mut y2 = y.clone();
                s2.rotate_left(rot);
                y2.rotate_left(rot);
                s2.reverse();
                y2.reverse();
                let q = fit_platt("y", &s2, &y2, &o).unwrap();
                prop_assert!((p.a - q.a).abs() < 1e-8 && (p.b - q.b).abs() < 1e-8);
            }

            #[test]
            fn apply_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, x in -3.0f64..3.0, dx in 0.01f64..1.0) {
                prop_assume!(a.abs() > 1e-3);
                let (lo, hi) = (apply_platt(a, b, x), apply_platt(a, b, x + dx));
                if a < 0.0 { prop_assert!(hi > lo) } else { prop_assert!(hi < lo) }
                prop_assert!(lo > 0.0 && lo < 1.0);
            }
        }
    }
}

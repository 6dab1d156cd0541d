//! Independent reference computations shared by integration tests.
//!
//! Nothing here calls into the library's numeric code.

#![allow(dead_code)]

/// Tie-averaged ranks by counting: rank(x) = #{y < x} + (#{y = x} + 1) / 2.
pub fn ranks_by_counting(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&x| {
            let less = values.iter().filter(|&&y| y < x).count() as f64;
            let equal = values.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// One-sided signed-rank p-value P(W ≥ W_obs) by enumerating all 2ⁿ sign
/// patterns over the nonzero differences.
pub fn signed_rank_p_by_enumeration(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let r = ranks_by_counting(&abs);
    let w_obs: f64 = nz.iter().zip(&r).map(|(d, r)| d.signum() * r).sum();
    let n = nz.len();
    let mut hits = 0u64;
    for mask in 0u64..(1u64 << n) {
        let w: f64 = (0..n)
            .map(|i| if mask >> i & 1 == 1 { r[i] } else { -r[i] })
            .sum();
        // Ranks are multiples of ½, so sums compare exactly.
        if w >= w_obs {
            hits += 1;
        }
    }
    (w_obs, hits as f64 / (1u64 << n) as f64)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn p_of(z: f64) -> f64 {
    // 1 / (1 + e^z), written to avoid overflow.
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Platt-style targets: (N₊+1)/(N₊+2) and 1/(N₋+2) when smoothing, else 0/1.
pub fn platt_targets(labels: &[bool], smoothing: bool) -> Vec<f64> {
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = labels.len() as f64 - pos;
    labels
        .iter()
        .map(|&y| match (smoothing, y) {
            (true, true) => (pos + 1.0) / (pos + 2.0),
            (true, false) => 1.0 / (neg + 2.0),
            (false, true) => 1.0,
            (false, false) => 0.0,
        })
        .collect()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing; returns the root.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-likelihood (a, b) for p = 1/(1+exp(a·s+b)) against soft targets,
/// by nested bisection on the score equations.
///
/// For fixed a, Σ(t − p) is increasing in b; along the profile b*(a) the
/// derivative Σ(t − p)·s is increasing in a because the profile of a convex
/// function is convex.
pub fn logistic_mle_bisection(scores: &[f64], targets: &[f64]) -> (f64, f64) {
    let b_star = |a: f64| {
        bisect(-60.0, 60.0, |b| {
            scores
                .iter()
                .zip(targets)
                .map(|(&s, &t)| t - p_of(a * s + b))
                .sum()
        })
    };
    let a = bisect(-60.0, 60.0, |a| {
        let b = b_star(a);
        scores
            .iter()
            .zip(targets)
            .map(|(&s, &t)| (t - p_of(a * s + b)) * s)
            .sum()
    });
    (a, b_star(a))
}

/// Objective value for diagnostics.
pub fn logistic_nll(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let z = a * s + b;
            t * softplus(z) + (1.0 - t) * softplus(-z)
        })
        .sum()
}

/// Standard normal upper tail by Simpson integration of the density; accurate
/// to ~1e-10 on |z| ≤ 8.
pub fn normal_sf_by_quadrature(z: f64) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (a, b) = if z >= 0.0 { (z, 12.0) } else { (-12.0, z) };
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut s = phi(a) + phi(b);
    for i in 1..n {
        s += phi(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = s * h / 3.0;
    if z >= 0.0 {
        integral
    } else {
        1.0 - integral
    }
}

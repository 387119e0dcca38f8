//! Small numerical utilities shared across modules: compensated summation,
//! Gauss–Legendre quadrature, adaptive Simpson integration, Wilson score
//! intervals, least-squares line fits and a couple of distribution helpers.

use crate::{Error, Result};

/// Pairwise (cascade) summation. Error grows like `O(log n)` ulps instead of
/// `O(n)` for naive left-to-right accumulation, and the result does not depend
/// on thread scheduling because the split points are a function of the slice
/// layout alone.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// computed by Newton iteration on the Legendre recurrence. Exact for
/// polynomials of degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        // The middle node of an odd rule is exactly zero.
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let d = 0.5 * (b + a);
    (
        xs.iter().map(|x| c * x + d).collect(),
        ws.iter().map(|w| c * w).collect(),
    )
}

/// Adaptive Simpson integration of `f` on `[a, b]` to absolute tolerance
/// `tol`. Classic bisection scheme with the 1/15 Richardson error estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth >= 50 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth + 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth + 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 0)
}

/// Two-sided 95% z value used throughout for Wilson intervals.
pub const WILSON_Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for a binomial proportion. Unlike the Wald interval
/// it behaves sensibly at `successes = 0` and `successes = trials`, which
/// matters for rare-event tail estimates.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0, "wilson_interval needs at least one trial");
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Ordinary least-squares line fit together with the coefficient of
/// determination.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "linear_fit: {} x values vs {} y values",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "linear_fit needs at least 2 points, got {n}"
        )));
    }
    let xbar = mean(xs);
    let ybar = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - xbar;
        let dy = ys[i] - ybar;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "linear_fit: all x values identical".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res = (syy - slope * sxy).max(0.0);
    // Degenerate flat data: the line reproduces it exactly.
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LineFit { slope, intercept, r_squared, n_points: n })
}

/// Kolmogorov–Smirnov statistic of a sample against the Uniform[0,1] CDF.
pub fn ks_uniform(sample: &mut [f64]) -> f64 {
    assert!(!sample.is_empty());
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - x;
        let lo = x - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// `ln(k!)` by direct accumulation; exact enough (`~1e-14` relative) for the
/// binomial orders used here.
pub fn ln_factorial(k: u64) -> f64 {
    let mut acc = 0.0;
    for i in 2..=k {
        acc += (i as f64).ln();
    }
    acc
}

/// `ln C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Numerically stable `ln(Σ exp(x_i))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let shifted: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    m + pairwise_sum(&shifted).ln()
}

/// Standard normal CDF `Φ(x)`.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(standard_normal_cdf(0.0), 0.5);
        assert!((standard_normal_cdf(1.96) - 0.975_002_104_851_779_5).abs() < 1e-15);
        assert!((standard_normal_cdf(3.0) - 0.998_650_101_968_369_9).abs() < 1e-15);
        assert!((standard_normal_cdf(-3.0) - 0.001_349_898_031_630_095).abs() < 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [2usize, 5, 16, 32] {
            let (xs, ws) = gauss_legendre(n);
            // ∫_{-1}^{1} x^k dx = 2/(k+1) for even k, 0 for odd k.
            for k in 0..(2 * n) {
                let got: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(k as i32)).sum();
                let want = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert!(
                    (got - want).abs() < 1e-12,
                    "n={n} k={k}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn gauss_legendre_handles_oscillatory_integrands() {
        // ∫_0^1 cos(2π m u) du = 0 and ∫_0^1 cos²(2π m u) du = 1/2.
        let (xs, ws) = gauss_legendre_on(64, 0.0, 1.0);
        for m in 1..=8 {
            let f = |u: f64| (2.0 * std::f64::consts::PI * m as f64 * u).cos();
            let i1: f64 = xs.iter().zip(&ws).map(|(x, w)| w * f(*x)).sum();
            let i2: f64 = xs.iter().zip(&ws).map(|(x, w)| w * f(*x) * f(*x)).sum();
            assert!(i1.abs() < 1e-13);
            assert!((i2 - 0.5).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_simpson_hits_closed_forms() {
        let f = |x: f64| x.exp();
        let got = adaptive_simpson(&f, 0.0, 1.0, 1e-12);
        assert!((got - (std::f64::consts::E - 1.0)).abs() < 1e-11);

        let g = |x: f64| 1.0 / (1.0 + x * x);
        let got = adaptive_simpson(&g, 0.0, 1.0, 1e-12);
        assert!((got - std::f64::consts::FRAC_PI_4).abs() < 1e-11);
    }

    #[test]
    fn wilson_interval_brackets_the_point_estimate() {
        let (lo, hi) = wilson_interval(50, 100, WILSON_Z95);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!((hi - lo) < 0.21);
        // Zero successes still give a nondegenerate upper bound.
        let (lo0, hi0) = wilson_interval(0, 2000, WILSON_Z95);
        assert!(lo0.abs() < 1e-12);
        assert!(hi0 > 0.0 && hi0 < 3e-3);
    }

    #[test]
    fn linear_fit_recovers_exact_lines() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_rejects_degenerate_input() {
        assert!(linear_fit(&[1.0], &[2.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn ks_uniform_is_small_for_a_uniform_grid() {
        let mut xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&mut xs) < 1e-3 + 1e-12);
    }

    #[test]
    fn ln_choose_matches_direct_values() {
        assert!((ln_choose(10, 3) - (120f64).ln()).abs() < 1e-12);
        // Stirling-series value of ln C(200, 100).
        assert!((ln_choose(200, 100) - 135.7531).abs() < 5e-3);
    }

    #[test]
    fn log_sum_exp_survives_large_arguments() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}

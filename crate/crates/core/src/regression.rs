//! The functional kernel regression estimator and its small-ball machinery.
//!
//! For a sample `(X_s, Y_s)` on the cube and an evaluation point `x`,
//!
//! - `f̂_h(x) = (|I_n|·F_x(h))⁻¹ Σ_s K(d(X_s, x)/h)`,
//! - `ĝ_h(x) = (|I_n|·F_x(h))⁻¹ Σ_s K(d(X_s, x)/h)·Y_s` coefficient-wise,
//! - `Ψ̂_h(x) = ĝ_h(x) / f̂_h(x)`,
//!
//! where `F_x(h) = P(d(X, x) ≤ h)` is the small-ball probability. `F` is a
//! plugin: an analytic formula, a Monte Carlo table, or — explicitly flagged —
//! the in-sample empirical fraction. The estimator never silently
//! self-estimates `F` from the sample it is applied to.
//!
//! `M_x = K(1) - ∫₀¹ K'(u)·τ_x(u) du` is the small-ball limit of `E f̂_h(x)`,
//! with `τ_x(u) = lim F_x(uh)/F_x(h)`. Integrating the kernel sum by parts
//! gives the exact finite-`h` identity `E f̂_h(x) = K(1) - ∫₀¹ K'(u)·
//! [F_x(uh)/F_x(h)] du`, which the Monte Carlo tests exploit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fields::{FieldSample, GeneratorKind, GeneratorSpec, InnovationKind, PsiSpec};
use crate::hilbert::{Covering, FunctionalElement, PseudoMetric};
use crate::numeric;
use crate::rng::{stream, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `K(u) = (1-u²)·1[0 ≤ u ≤ 1]` — vanishes at 1, Lipschitz constant 2.
    Quadratic,
    /// `K(u) = (1-u)·1[0 ≤ u ≤ 1]` — vanishes at 1, Lipschitz constant 1.
    TriangleZero,
    /// `K(u) = 1[0 ≤ u ≤ 1]` (closed ball) — does not vanish at 1 and is not
    /// Lipschitz; rejected by the weak-dependence code paths.
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Lipschitz constant of `K` on `[0, 1]` (`max |K'|`).
    pub lipschitz_const: f64,
    pub k_at_one: f64,
}

impl KernelSpec {
    pub fn quadratic() -> Self {
        KernelSpec { kind: KernelKind::Quadratic, lipschitz_const: 2.0, k_at_one: 0.0 }
    }

    pub fn triangle_zero() -> Self {
        KernelSpec { kind: KernelKind::TriangleZero, lipschitz_const: 1.0, k_at_one: 0.0 }
    }

    pub fn indicator() -> Self {
        KernelSpec { kind: KernelKind::Indicator, lipschitz_const: 0.0, k_at_one: 1.0 }
    }

    /// `K(u)` for `u ≥ 0`.
    pub fn eval(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0);
        match self.kind {
            KernelKind::Quadratic => {
                if u <= 1.0 {
                    1.0 - u * u
                } else {
                    0.0
                }
            }
            KernelKind::TriangleZero => {
                if u <= 1.0 {
                    1.0 - u
                } else {
                    0.0
                }
            }
            KernelKind::Indicator => {
                if u <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `K'(u)` on `(0, 1)`; zero outside.
    pub fn derivative(&self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        match self.kind {
            KernelKind::Quadratic => -2.0 * u,
            KernelKind::TriangleZero => -1.0,
            KernelKind::Indicator => 0.0,
        }
    }

    pub fn vanishes_at_one(&self) -> bool {
        self.k_at_one == 0.0
    }
}

/// `K(u)` convenience free function.
pub fn kernel_eval(spec: &KernelSpec, u: f64) -> f64 {
    spec.eval(u)
}

/// Lipschitz constant of `x ↦ K(d(x, y)/h)` with respect to `d`: by the
/// reverse triangle inequality this is `L_K / h` for kernels vanishing at 1.
/// The indicator kernel has a jump and is refused.
pub fn kernel_pseudo_norm(spec: &KernelSpec, h: f64, _metric: &PseudoMetric) -> Result<f64> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::invalid("h", format!("need h > 0, got {h}")));
    }
    if !spec.vanishes_at_one() {
        return Err(Error::NotLipschitz(
            "indicator kernel jumps at the ball boundary; no finite Lipschitz constant",
        ));
    }
    Ok(spec.lipschitz_const / h)
}

/// Empirical small-ball table from independent draws of the marginal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallTable {
    pub x: FunctionalElement,
    pub h_grid: Vec<f64>,
    pub f_hat: Vec<f64>,
    /// Grid entries where no draw landed inside the ball (downstream must
    /// not divide by these).
    pub zero_mass: Vec<bool>,
    pub replicates: usize,
    /// Sorted distances of all draws; supports exact counting at any radius.
    pub sorted_distances: Vec<f64>,
}

impl SmallBallTable {
    /// Exact empirical `F̂(h)` by counting stored distances.
    pub fn f_at(&self, h: f64) -> f64 {
        let count = self.sorted_distances.partition_point(|&d| d <= h);
        count as f64 / self.replicates as f64
    }

    /// `τ̂(u) = F̂(h_ref·u)/F̂(h_ref)` on the given `u` grid.
    pub fn tau_hat(&self, h_ref: f64, u_grid: &[f64]) -> Result<Vec<f64>> {
        let denom = self.f_at(h_ref);
        if denom == 0.0 {
            return Err(Error::SmallBallUnavailable(format!(
                "empirical F̂({h_ref}) = 0; cannot form τ̂ ratios"
            )));
        }
        Ok(u_grid.iter().map(|&u| self.f_at(h_ref * u) / denom).collect())
    }
}

/// Draws one realization of the generator's single-site marginal law.
pub fn sample_marginal(
    spec: &GeneratorSpec,
    lattice_dim: usize,
    rng: &mut impl rand::Rng,
) -> FunctionalElement {
    use rand_distr::{Distribution, StandardNormal};
    let j_max = spec.basis.j_max;
    let scales: Vec<f64> = (1..=j_max).map(|j| spec.coeff_decay.scale(j)).collect();
    match spec.kind {
        GeneratorKind::FunctionalMa { q } => {
            // Weighted sum over the causal window, same weights as the field.
            let window = (q as usize + 1).pow(lattice_dim as u32);
            let mut weights = Vec::with_capacity(window);
            let mut idx = vec![0u32; lattice_dim];
            loop {
                let m = idx.iter().copied().max().unwrap_or(0);
                weights.push((-(m as f64)).exp());
                let mut k = lattice_dim;
                loop {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] <= q {
                        break;
                    }
                    idx[k] = 0;
                    if k == 0 {
                        break;
                    }
                }
                if idx.iter().all(|&v| v == 0) {
                    break;
                }
            }
            let norm: f64 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            let mut coeffs = vec![0.0; j_max];
            for w in &weights {
                for (j, c) in coeffs.iter_mut().enumerate() {
                    let z = match spec.innovation {
                        InnovationKind::Gaussian => StandardNormal.sample(rng),
                        InnovationKind::TruncatedGaussian { cutoff } => loop {
                            let z: f64 = StandardNormal.sample(rng);
                            if z.abs() <= cutoff {
                                break z;
                            }
                        },
                    };
                    *c += (w / norm) * scales[j] * z;
                }
            }
            FunctionalElement::new(coeffs)
        }
        GeneratorKind::GaussExp { .. } => {
            // Stationary marginal is centered Gaussian with the scale
            // schedule, independent of ρ.
            let coeffs = scales
                .iter()
                .map(|s| {
                    let z: f64 = StandardNormal.sample(rng);
                    s * z
                })
                .collect();
            FunctionalElement::new(coeffs)
        }
        GeneratorKind::BernoulliAr1 => {
            let mut coeffs = vec![0.0; j_max];
            coeffs[0] = rng.gen_range(0.0..1.0) - 0.5;
            FunctionalElement::new(coeffs)
        }
    }
}

/// Monte Carlo small-ball table: `F̂(h)` = fraction of independent marginal
/// draws with `d(X, x) ≤ h`.
pub fn estimate_small_ball(
    x: &FunctionalElement,
    h_grid: &[f64],
    spec: &GeneratorSpec,
    lattice_dim: usize,
    metric: &PseudoMetric,
    replicates: usize,
    seed: u64,
) -> Result<SmallBallTable> {
    if replicates < 100 {
        return Err(Error::invalid(
            "replicates",
            format!("need at least 100 small-ball replicates, got {replicates}"),
        ));
    }
    if h_grid.is_empty() || h_grid.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        return Err(Error::invalid("h_grid", "need a nonempty grid of positive radii"));
    }
    let mut distances: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(seed, tag::MARGINAL, &[rep]);
            let draw = sample_marginal(spec, lattice_dim, &mut rng);
            metric.distance(&draw, x)
        })
        .collect::<Result<_>>()?;
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut f_hat = Vec::with_capacity(h_grid.len());
    let mut zero_mass = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let count = distances.partition_point(|&d| d <= h);
        f_hat.push(count as f64 / replicates as f64);
        zero_mass.push(count == 0);
    }
    Ok(SmallBallTable {
        x: x.clone(),
        h_grid: h_grid.to_vec(),
        f_hat,
        zero_mass,
        replicates,
        sorted_distances: distances,
    })
}

/// Where `F_x(h)` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case")]
pub enum SmallBallPlan {
    /// Monte Carlo table (exact counting at any radius via stored distances).
    Table(SmallBallTable),
    /// `F(h) = c·h^α`.
    PowerLaw { c: f64, alpha: f64 },
    /// `F(h) = P(|scale·Z| ≤ h)` for a standard normal truncated at
    /// `±cutoff`: `(2Φ(min(h, scale·cutoff)/scale) - 1)/(2Φ(cutoff) - 1)`.
    TruncGaussAbs { scale: f64, cutoff: f64 },
    /// Empirical fraction from the very sample being estimated — explicitly
    /// flagged in-sample use; the ball count is the denominator, exactly.
    InSample,
}

impl SmallBallPlan {
    pub fn is_in_sample(&self) -> bool {
        matches!(self, SmallBallPlan::InSample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kernel: KernelSpec,
    pub bandwidth: f64,
    pub metric: PseudoMetric,
    pub small_ball: SmallBallPlan,
    pub min_denominator: f64,
}

pub const DEFAULT_MIN_DENOMINATOR: f64 = 1e-8;

impl EstimatorConfig {
    pub fn new(
        kernel: KernelSpec,
        bandwidth: f64,
        metric: PseudoMetric,
        small_ball: SmallBallPlan,
    ) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::invalid("bandwidth", format!("need h > 0, got {bandwidth}")));
        }
        Ok(EstimatorConfig {
            kernel,
            bandwidth,
            metric,
            small_ball,
            min_denominator: DEFAULT_MIN_DENOMINATOR,
        })
    }

    pub fn with_min_denominator(mut self, v: f64) -> Result<Self> {
        if !(v > 0.0) {
            return Err(Error::invalid("min_denominator", format!("need > 0, got {v}")));
        }
        self.min_denominator = v;
        Ok(self)
    }
}

/// Kernel weights and the denominator `|I_n|·F_x(h)` for one evaluation
/// point. For the in-sample plan the denominator is the integer ball count,
/// avoiding a divide-and-remultiply round trip.
fn weights_and_denominator(
    config: &EstimatorConfig,
    sample: &FieldSample,
    x: &FunctionalElement,
) -> Result<(Vec<f64>, f64)> {
    let h = config.bandwidth;
    let distances: Vec<f64> = sample
        .x
        .iter()
        .map(|xs| config.metric.distance(xs, x))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = distances.iter().map(|&d| config.kernel.eval(d / h)).collect();
    let n = sample.len() as f64;
    let denom = match &config.small_ball {
        SmallBallPlan::Table(table) => {
            let f = table.f_at(h);
            if f == 0.0 {
                return Err(Error::SmallBallUnavailable(format!(
                    "small-ball table has no mass at h = {h}"
                )));
            }
            n * f
        }
        SmallBallPlan::PowerLaw { c, alpha } => {
            let f = c * h.powf(*alpha);
            if !(f > 0.0) {
                return Err(Error::SmallBallUnavailable(format!(
                    "power-law small ball gives F({h}) = {f}"
                )));
            }
            n * f.min(1.0)
        }
        SmallBallPlan::TruncGaussAbs { scale, cutoff } => {
            let t = (h / scale).min(*cutoff);
            let f = (2.0 * numeric::standard_normal_cdf(t) - 1.0)
                / (2.0 * numeric::standard_normal_cdf(*cutoff) - 1.0);
            if !(f > 0.0) {
                return Err(Error::SmallBallUnavailable(format!(
                    "truncated-Gaussian small ball gives F({h}) = {f}"
                )));
            }
            n * f
        }
        SmallBallPlan::InSample => {
            let count = distances.iter().filter(|&&d| d <= h).count();
            if count == 0 {
                return Err(Error::SmallBallUnavailable(format!(
                    "in-sample ball at h = {h} is empty"
                )));
            }
            count as f64
        }
    };
    Ok((weights, denom))
}

/// `f̂_h(x)`.
pub fn f_hat(config: &EstimatorConfig, sample: &FieldSample, x: &FunctionalElement) -> Result<f64> {
    let (weights, denom) = weights_and_denominator(config, sample, x)?;
    Ok(numeric::pairwise_sum(&weights) / denom)
}

/// `ĝ_h(x)`: kernel-weighted coefficient-wise average of the responses.
pub fn g_hat(
    config: &EstimatorConfig,
    sample: &FieldSample,
    x: &FunctionalElement,
) -> Result<FunctionalElement> {
    let (weights, denom) = weights_and_denominator(config, sample, x)?;
    let j_max = sample.spec.basis.j_max;
    let mut acc = vec![0.0f64; j_max];
    for (w, y) in weights.iter().zip(&sample.y) {
        if *w != 0.0 {
            for (a, c) in acc.iter_mut().zip(&y.coeffs) {
                *a += w * c;
            }
        }
    }
    for a in acc.iter_mut() {
        *a /= denom;
    }
    Ok(FunctionalElement::new(acc))
}

/// `Ψ̂_h(x) = ĝ_h(x)/f̂_h(x)`; refuses to divide by a denominator below
/// `min_denominator`.
pub fn psi_hat(
    config: &EstimatorConfig,
    sample: &FieldSample,
    x: &FunctionalElement,
) -> Result<FunctionalElement> {
    let (weights, denom) = weights_and_denominator(config, sample, x)?;
    let fh = numeric::pairwise_sum(&weights) / denom;
    if fh < config.min_denominator {
        return Err(Error::DenominatorUnderflow { f_hat: fh, min_denominator: config.min_denominator });
    }
    let j_max = sample.spec.basis.j_max;
    let mut acc = vec![0.0f64; j_max];
    for (w, y) in weights.iter().zip(&sample.y) {
        if *w != 0.0 {
            for (a, c) in acc.iter_mut().zip(&y.coeffs) {
                *a += w * c;
            }
        }
    }
    for a in acc.iter_mut() {
        *a = (*a / denom) / fh;
    }
    Ok(FunctionalElement::new(acc))
}

/// `M_x = K(1) - ∫₀¹ K'(u)·τ(u) du` by adaptive quadrature (tolerance 1e-10).
/// A non-positive result is refused: the estimator's denominator degenerates.
pub fn m_x(spec: &KernelSpec, tau: impl Fn(f64) -> f64) -> Result<f64> {
    let integral = numeric::adaptive_simpson(&|u| spec.derivative(u) * tau(u), 0.0, 1.0, 1e-10);
    let m = spec.k_at_one - integral;
    if m <= 0.0 {
        return Err(Error::invalid(
            "m_x",
            format!("small-ball limit constant must be positive, got {m}"),
        ));
    }
    Ok(m)
}

/// Error of `Ψ̂` at one covering center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterError {
    pub index: usize,
    pub f_hat: f64,
    /// `‖Ψ̂(v) - Ψ(v)‖_H`, `None` if the denominator underflowed.
    pub error: Option<f64>,
    pub underflow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupErrorReport {
    /// Max error over centers where the estimator is defined.
    pub max_error: f64,
    pub argmax_index: usize,
    pub evaluated: usize,
    pub underflow_count: usize,
    pub underflow_fraction: f64,
    pub per_center: Vec<CenterError>,
}

/// Evaluates `sup_x ‖Ψ̂_h(x) - Ψ(x)‖_H` over the covering centers.
/// Underflowing centers are reported, not dropped silently; if every center
/// underflows there is no estimate and an error is raised.
pub fn sup_error(
    config: &EstimatorConfig,
    sample: &FieldSample,
    covering: &Covering,
    psi: &PsiSpec,
) -> Result<SupErrorReport> {
    let per_center: Vec<CenterError> = covering
        .centers
        .par_iter()
        .enumerate()
        .map(|(index, center)| {
            let fh = f_hat(config, sample, center)?;
            if fh < config.min_denominator {
                return Ok(CenterError { index, f_hat: fh, error: None, underflow: true });
            }
            let est = psi_hat(config, sample, center)?;
            let truth = psi.apply(center);
            let err = est.sub(&truth)?.h_norm();
            Ok(CenterError { index, f_hat: fh, error: Some(err), underflow: false })
        })
        .collect::<Result<_>>()?;
    let underflow_count = per_center.iter().filter(|c| c.underflow).count();
    if underflow_count == per_center.len() {
        return Err(Error::DenominatorUnderflow {
            f_hat: 0.0,
            min_denominator: config.min_denominator,
        });
    }
    let (argmax_index, max_error) = per_center
        .iter()
        .filter_map(|c| c.error.map(|e| (c.index, e)))
        .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    Ok(SupErrorReport {
        max_error,
        argmax_index,
        evaluated: per_center.len(),
        underflow_count,
        underflow_fraction: underflow_count as f64 / per_center.len() as f64,
        per_center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{self, CoeffDecay};
    use crate::hilbert::{BasisFamily, BasisSpec, LipschitzBall, MeasureKind};
    use crate::lattice::LatticeCube;

    fn basis(j_max: usize) -> BasisSpec {
        BasisSpec::new(BasisFamily::Fourier, vec![[0.0, 1.0]], MeasureKind::Lebesgue, j_max)
            .unwrap()
    }

    fn ma_spec(q: u32, j_max: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec::new(
            GeneratorKind::FunctionalMa { q },
            basis(j_max),
            CoeffDecay { d0: 1.0, d1: 0.0 },
            InnovationKind::TruncatedGaussian { cutoff: 3.0 },
            seed,
        )
        .unwrap()
    }

    /// Sample with hand-picked first coefficients (others zero) and
    /// hand-picked responses; distances under Projection{1} from x = 0 are
    /// the absolute first coefficients.
    fn handmade(x1: &[f64], y1: &[f64], j_max: usize) -> FieldSample {
        let cube = LatticeCube::square(1, x1.len() as u32).unwrap();
        let x = x1
            .iter()
            .map(|&v| {
                let mut c = vec![0.0; j_max];
                c[0] = v;
                FunctionalElement::new(c)
            })
            .collect();
        let y = y1
            .iter()
            .map(|&v| {
                let mut c = vec![0.0; j_max];
                c[0] = v;
                FunctionalElement::new(c)
            })
            .collect();
        FieldSample {
            cube,
            x,
            y,
            spec: ma_spec(0, j_max, 1),
            psi: PsiSpec::zero(),
            noise_scale: 0.0,
        }
    }

    #[test]
    fn kernel_values_at_reference_points() {
        let q = KernelSpec::quadratic();
        assert_eq!(q.eval(0.0), 1.0);
        assert_eq!(q.eval(1.0), 0.0);
        assert_eq!(q.eval(1.5), 0.0);
        assert_eq!(q.eval(0.5), 0.75);
        let t = KernelSpec::triangle_zero();
        assert_eq!(t.eval(0.25), 0.75);
        assert_eq!(t.eval(1.0), 0.0);
        let i = KernelSpec::indicator();
        assert_eq!(i.eval(1.0), 1.0);
        assert_eq!(i.eval(1.0000001), 0.0);
    }

    #[test]
    fn pseudo_norm_is_lipschitz_over_bandwidth() {
        let metric = PseudoMetric::Full;
        let q = KernelSpec::quadratic();
        assert_eq!(kernel_pseudo_norm(&q, 0.5, &metric).unwrap(), 4.0);
        // Dense-grid check that max |K(u)-K(v)|/|u-v| matches L_K = 2.
        let mut max_ratio = 0.0f64;
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            let r = (q.eval(w[0]) - q.eval(w[1])).abs() / (w[1] - w[0]);
            max_ratio = max_ratio.max(r);
        }
        assert!(max_ratio <= 2.0 + 1e-9);
        assert!(max_ratio > 2.0 - 1e-2);
        match kernel_pseudo_norm(&KernelSpec::indicator(), 0.5, &metric) {
            Err(Error::NotLipschitz(_)) => {}
            other => panic!("expected NotLipschitz, got {other:?}"),
        }
    }

    #[test]
    fn small_ball_table_saturates_and_is_monotone() {
        let spec = ma_spec(0, 3, 9);
        let x = FunctionalElement::zeros(3);
        let grid = vec![0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 50.0];
        let table =
            estimate_small_ball(&x, &grid, &spec, 1, &PseudoMetric::Full, 500, 77).unwrap();
        assert_eq!(*table.f_hat.last().unwrap(), 1.0);
        for w in table.f_hat.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(table.f_hat.iter().all(|&f| (0.0..=1.0).contains(&f)));
        assert!(matches!(
            estimate_small_ball(&x, &grid, &spec, 1, &PseudoMetric::Full, 99, 77),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn two_dim_gaussian_projection_matches_the_rayleigh_oracle() {
        // Projection onto two unit-variance independent Gaussian coefficients:
        // F(h) = 1 - exp(-h²/2) exactly, and τ(u) → u² as h → 0.
        let spec = GeneratorSpec::new(
            GeneratorKind::GaussExp { rho: 0.4 },
            basis(4),
            CoeffDecay { d0: 1.0, d1: 0.0 },
            InnovationKind::Gaussian,
            5,
        )
        .unwrap();
        let metric = PseudoMetric::Projection { j: 2 };
        let x = FunctionalElement::zeros(4);
        let grid = vec![0.0625, 0.125, 0.2, 0.3, 0.5];
        let reps = 50_000;
        let table = estimate_small_ball(&x, &grid, &spec, 1, &metric, reps, 2024).unwrap();
        for (i, &h) in grid.iter().enumerate() {
            let oracle = 1.0 - (-h * h / 2.0).exp();
            let se = (oracle * (1.0 - oracle) / reps as f64).sqrt();
            assert!(
                (table.f_hat[i] - oracle).abs() < 4.0 * se + 1e-12,
                "h = {h}: {} vs {oracle}",
                table.f_hat[i]
            );
        }
        let taus = table.tau_hat(0.25, &[0.25, 0.5, 0.75]).unwrap();
        for (tau, u) in taus.iter().zip([0.25f64, 0.5, 0.75]) {
            assert!((tau - u * u).abs() < 0.05, "tau({u}) = {tau}");
        }
    }

    #[test]
    fn m_x_closed_forms() {
        let two_thirds = m_x(&KernelSpec::quadratic(), |u| u).unwrap();
        assert!((two_thirds - 2.0 / 3.0).abs() < 1e-9);
        let one = m_x(&KernelSpec::indicator(), |u| u).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let half = m_x(&KernelSpec::quadratic(), |u| u * u).unwrap();
        assert!((half - 0.5).abs() < 1e-9);
    }

    #[test]
    fn f_hat_three_site_worked_example() {
        let h = 0.4;
        let sample = handmade(&[0.0, 0.2, 0.8], &[0.0, 0.0, 0.0], 2);
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            h,
            PseudoMetric::Projection { j: 1 },
            SmallBallPlan::PowerLaw { c: 0.5, alpha: 0.0 },
        )
        .unwrap();
        // Distances {0, h/2, 2h}: (K(0) + K(1/2) + 0)/(3·0.5) = 1.75/1.5.
        let f = f_hat(&config, &sample, &FunctionalElement::zeros(2)).unwrap();
        assert!((f - 7.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn f_hat_vanishes_outside_kernel_support() {
        let sample = handmade(&[0.5, 0.9, 2.0], &[1.0, 1.0, 1.0], 2);
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            0.3,
            PseudoMetric::Projection { j: 1 },
            SmallBallPlan::PowerLaw { c: 0.5, alpha: 0.0 },
        )
        .unwrap();
        assert_eq!(f_hat(&config, &sample, &FunctionalElement::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn f_hat_expectation_matches_the_small_ball_limit_constant() {
        // q = 0 truncated-normal first coefficient, metric = first-coordinate
        // distance, x = 0, exact plugin F. Integrating the kernel sum by
        // parts, E f̂_h(x) = K(1) - ∫ K'(u)·[F(hu)/F(h)] du at every h, so
        // the Monte Carlo mean must sit within sampling error of that value.
        let spec = ma_spec(0, 2, 31);
        let cutoff = 3.0;
        let phi = |t: f64| numeric::standard_normal_cdf(t);
        let f_exact = |h: f64| (2.0 * phi(h.min(cutoff)) - 1.0) / (2.0 * phi(cutoff) - 1.0);
        for &h in &[0.2, 0.35, 0.5] {
            let target = m_x(&KernelSpec::quadratic(), |u| f_exact(h * u) / f_exact(h)).unwrap();
            let config = EstimatorConfig::new(
                KernelSpec::quadratic(),
                h,
                PseudoMetric::Projection { j: 1 },
                SmallBallPlan::TruncGaussAbs { scale: 1.0, cutoff },
            )
            .unwrap();
            let reps = 2000;
            let n_sites = 40;
            let cube = LatticeCube::square(1, n_sites).unwrap();
            let x0 = FunctionalElement::zeros(2);
            let vals: Vec<f64> = (0..reps)
                .map(|r| {
                    let mut s = spec.clone();
                    s.seed = 100_000 + r;
                    let sample = fields::generate(&s, &PsiSpec::zero(), &cube, 0.0).unwrap();
                    f_hat(&config, &sample, &x0).unwrap()
                })
                .collect();
            let mean = numeric::mean(&vals);
            let var = numeric::mean(
                &vals.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>(),
            );
            let se = (var / reps as f64).sqrt();
            assert!(
                (mean - target).abs() < 3.0 * se,
                "h = {h}: mean {mean} vs target {target} (se {se})"
            );
        }
    }

    #[test]
    fn numerator_denominator_identity() {
        let spec = ma_spec(1, 3, 404);
        let cube = LatticeCube::square(1, 400).unwrap();
        let sample =
            fields::generate(&spec, &PsiSpec::linear_diag(vec![0.8, 0.3]), &cube, 0.2).unwrap();
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            0.8,
            PseudoMetric::Full,
            SmallBallPlan::PowerLaw { c: 0.3, alpha: 1.0 },
        )
        .unwrap();
        let x = FunctionalElement::zeros(3);
        let g = g_hat(&config, &sample, &x).unwrap();
        let f = f_hat(&config, &sample, &x).unwrap();
        let psi = psi_hat(&config, &sample, &x).unwrap();
        for (gj, pj) in g.coeffs.iter().zip(&psi.coeffs) {
            assert!((gj - pj * f).abs() <= 1e-12 * gj.abs().max(1.0));
        }
    }

    #[test]
    fn f_hat_grows_with_bandwidth_under_a_frozen_plan() {
        let spec = ma_spec(0, 2, 88);
        let cube = LatticeCube::square(1, 300).unwrap();
        let sample = fields::generate(&spec, &PsiSpec::zero(), &cube, 0.0).unwrap();
        let x = FunctionalElement::zeros(2);
        let mut last = 0.0;
        for &h in &[0.2, 0.4, 0.8, 1.6] {
            let config = EstimatorConfig::new(
                KernelSpec::quadratic(),
                h,
                PseudoMetric::Full,
                SmallBallPlan::PowerLaw { c: 0.6, alpha: 0.0 },
            )
            .unwrap();
            let f = f_hat(&config, &sample, &x).unwrap();
            assert!(f >= last, "f̂ decreased from {last} to {f} at h = {h}");
            last = f;
        }
    }

    #[test]
    fn g_hat_is_exactly_linear_in_dyadic_responses() {
        // Dyadic distances and integer responses make every product exact,
        // so additivity holds bitwise.
        let h = 1.0;
        let xs = [0.0, 0.5];
        let ya = [3.0, 5.0];
        let yb = [2.0, -7.0];
        let ysum = [5.0, -2.0];
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            h,
            PseudoMetric::Projection { j: 1 },
            SmallBallPlan::PowerLaw { c: 0.5, alpha: 0.0 },
        )
        .unwrap();
        let x0 = FunctionalElement::zeros(2);
        let g = |y: &[f64]| g_hat(&config, &handmade(&xs, y, 2), &x0).unwrap();
        let ga = g(&ya);
        let gb = g(&yb);
        let gsum = g(&ysum);
        for j in 0..2 {
            assert_eq!(gsum.coeffs[j], ga.coeffs[j] + gb.coeffs[j]);
        }
    }

    #[test]
    fn single_site_at_distance_zero_returns_the_response() {
        // F = 0.5 makes the shared weight a power of two, so the numerator/
        // denominator cancellation is exact.
        let sample = handmade(&[0.0], &[4.25], 2);
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            0.5,
            PseudoMetric::Projection { j: 1 },
            SmallBallPlan::PowerLaw { c: 0.5, alpha: 0.0 },
        )
        .unwrap();
        let psi = psi_hat(&config, &sample, &FunctionalElement::zeros(2)).unwrap();
        assert_eq!(psi.coeffs[0], 4.25);
        assert_eq!(psi.coeffs[1], 0.0);
    }

    #[test]
    fn in_sample_indicator_denominator_self_normalizes() {
        let spec = ma_spec(1, 3, 3001);
        let cube = LatticeCube::square(1, 500).unwrap();
        let sample = fields::generate(&spec, &PsiSpec::zero(), &cube, 0.1).unwrap();
        let config = EstimatorConfig::new(
            KernelSpec::indicator(),
            0.9,
            PseudoMetric::Full,
            SmallBallPlan::InSample,
        )
        .unwrap();
        let f = f_hat(&config, &sample, &FunctionalElement::zeros(3)).unwrap();
        assert_eq!(f, 1.0);
    }

    #[test]
    fn psi_hat_refuses_underflowing_denominators() {
        let sample = handmade(&[5.0, 6.0, 7.0], &[1.0, 1.0, 1.0], 2);
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            0.5,
            PseudoMetric::Projection { j: 1 },
            SmallBallPlan::PowerLaw { c: 0.5, alpha: 0.0 },
        )
        .unwrap();
        let mut probe = FunctionalElement::zeros(2);
        probe.coeffs[0] = -10.0;
        match psi_hat(&config, &sample, &probe) {
            Err(Error::DenominatorUnderflow { f_hat, .. }) => assert_eq!(f_hat, 0.0),
            other => panic!("expected underflow, got {other:?}"),
        }
    }

    #[test]
    fn sup_error_zero_for_noiseless_zero_psi() {
        let spec = ma_spec(0, 4, 17);
        let cube = LatticeCube::square(1, 800).unwrap();
        let sample = fields::generate(&spec, &PsiSpec::zero(), &cube, 0.0).unwrap();
        let ball = LipschitzBall::new(1.0).unwrap();
        let covering =
            crate::hilbert::build_covering(&ball, 0.5, &spec.basis, 100_000).unwrap();
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            1.5,
            PseudoMetric::Full,
            SmallBallPlan::PowerLaw { c: 0.2, alpha: 1.0 },
        )
        .unwrap();
        let report = sup_error(&config, &sample, &covering, &PsiSpec::zero()).unwrap();
        assert!(report.underflow_fraction < 1.0);
        assert_eq!(report.max_error, 0.0);
    }

    #[test]
    fn sup_error_on_a_singleton_covering_is_the_pointwise_error() {
        let spec = ma_spec(0, 2, 44);
        let cube = LatticeCube::square(1, 300).unwrap();
        let psi = PsiSpec::linear_diag(vec![0.5]);
        let sample = fields::generate(&spec, &psi, &cube, 0.1).unwrap();
        let ball = LipschitzBall::new(0.0).unwrap();
        let covering = crate::hilbert::build_covering(&ball, 0.5, &spec.basis, 10).unwrap();
        assert_eq!(covering.len(), 1);
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            1.0,
            PseudoMetric::Full,
            SmallBallPlan::PowerLaw { c: 0.4, alpha: 1.0 },
        )
        .unwrap();
        let report = sup_error(&config, &sample, &covering, &psi).unwrap();
        let direct = psi_hat(&config, &sample, &covering.centers[0])
            .unwrap()
            .sub(&psi.apply(&covering.centers[0]))
            .unwrap()
            .h_norm();
        assert_eq!(report.max_error, direct);
        assert_eq!(report.evaluated, 1);
    }

    #[test]
    fn sup_error_fails_when_every_center_underflows() {
        let sample = handmade(&[50.0, 60.0], &[0.0, 0.0], 2);
        let ball = LipschitzBall::new(0.5).unwrap();
        let basis2 = basis(2);
        let covering = crate::hilbert::build_covering(&ball, 0.5, &basis2, 10_000).unwrap();
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            0.2,
            PseudoMetric::Projection { j: 1 },
            SmallBallPlan::PowerLaw { c: 0.5, alpha: 0.0 },
        )
        .unwrap();
        match sup_error(&config, &sample, &covering, &PsiSpec::zero()) {
            Err(Error::DenominatorUnderflow { .. }) => {}
            other => panic!("expected total underflow, got {other:?}"),
        }
    }
}

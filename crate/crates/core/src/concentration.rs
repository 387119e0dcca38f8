//! Exponential bounds for lattice averages and the machinery to test them.
//!
//! The module has four parts:
//!
//! 1. **Closed-form bound evaluators** ([`BoundSpec`], [`bound_eval`]): seven
//!    parametric families of exponential upper bounds for tail probabilities
//!    (or, for the `prop31_laplace` form, for the log-Laplace transform) of
//!    normalized lattice sums. The leading constants are *inputs*: callers
//!    fit them on one cube and test dominance on others.
//! 2. **Monte Carlo estimators** ([`empirical_tail`],
//!    [`empirical_log_laplace`]): seeded replicate runs producing exceedance
//!    frequencies with Wilson intervals, or log-Laplace estimates with
//!    jackknife standard errors, paired cell-by-cell with bound values.
//! 3. **Slope diagnostics** ([`slope_diagnostic`]): least-squares fit of
//!    `ln P̂` against `ε · R(n)` where `R(n) = |I_n|^{1/N} / (ln |I_n|)²` is
//!    the effective-sample-size rate of the tail bounds.
//! 4. **Exact product-covariance checker** ([`ibragimov_check`]): for a
//!    finite discrete joint law of non-negative bounded variables, verifies
//!    `|E ∏ Zᵢ − ∏ E Zᵢ| ≤ (k−1) · α · ∏ ‖Zᵢ‖_∞` with the dependence
//!    coefficient `α` computed by exhaustive enumeration of split events.
//!
//! Replicates are parallelized with per-replicate derived seeds; aggregation
//! uses ordered collection and pairwise summation, so results do not depend
//! on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{generate, GeneratorSpec, PsiSpec};
use crate::hilbert::{FunctionalElement, PseudoMetric};
use crate::lattice::{check_aspect_ratio, CubeSize, LatticeCube};
use crate::numeric::{
    self, pairwise_sum, wilson_interval, LineFit, WILSON_Z95,
};
use crate::regression::{kernel_eval, KernelSpec};
use crate::rng::{derive_seed, stream, tag};

/// Rate functional `R(n) = |I_n|^{1/N} / (ln |I_n|)²` governing the tail
/// bounds. Requires more than one site so the logarithm is positive.
pub fn rate_functional(cube: &CubeSize) -> f64 {
    cube.effective_sample_size() / cube.ln_sites().powi(2)
}

/// Tail exponent `2γ/(2+3γ)` of the `thm33` family; equals `2/5` at `γ = 1`.
pub fn thm33_tail_exponent(gamma: f64) -> f64 {
    2.0 * gamma / (2.0 + 3.0 * gamma)
}

/// One of the seven closed-form bound families.
///
/// The serialized token (`which`) selects the family; the remaining fields
/// are the constants of that family. `eps` in [`bound_eval`] is the tail
/// level for the six tail forms and the Laplace argument `β` for
/// `prop31_laplace`.
///
/// * `cor32` — real-valued α-mixing tail: `A1·exp(−A2·(ε/B)·R(n))`.
/// * `thm33_general` — Hilbert-norm tail, any `γ > 0`:
///   `A1·exp(−A2·(εR)^{2γ/(2+3γ)}) · [ε⁻² + (εR)^{2γ/(2+3γ)} +
///   R^{2(1+γ−γ²)/((2+3γ)(1+γ))} · ε^{−γ(3+5γ)/((2+3γ)(1+γ))}]`.
/// * `thm33_gamma1` — the same family with the exponents pinned at their
///   `γ = 1` values (`2/5`, `1/5`, `−4/5`); requires `γ ≥ 1` and evaluates
///   identically to `thm33_general` at `γ = 1`.
/// * `prop41` — real-valued weak-dependence tail:
///   `A1·exp(−A2·ε²·|I_n|^{1/N}/(G·B²))` with `G` the weight-norm constant.
/// * `thm42_general` — Hilbert-norm weak-dependence tail with
///   `m = (ε²·|I_n|^{1/N}/G)^{γ/(2+2γ)}`:
///   `A1·[ε⁻² + m + m^{(4+5γ)/(4+2γ)}·ε^{−3γ/(2+γ)}·(|I_n|^{1/N}/G)^{(1−γ)/(2+γ)}]
///   · exp(−A2·m)`.
/// * `thm42_gamma1` — same with exponents pinned at `γ = 1`
///   (`m = (ε²|I_n|^{1/N}/G)^{1/4}`, bracket `ε⁻² + m + m^{3/2}/ε`).
/// * `prop31_laplace` — upper bound for `log E exp(β Σ Z_s)`:
///   `A1(βB)²|I_n|(1 + |I_n|^{(N−1)/N} ln|I_n|)
///   + A1·βB·|I_n|·exp(−A2·(βB)^{−1/N})
///   + A1·(βB)^{(N+1)/N}·|I_n|·exp(−A2·(βB)^{1−(N+1)/N²}·|I_n|^{(N−1)/N})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "which", rename_all = "snake_case")]
pub enum BoundSpec {
    Cor32 { a1: f64, a2: f64, b: f64 },
    Thm33General { a1: f64, a2: f64, gamma: f64 },
    Thm33Gamma1 { a1: f64, a2: f64, gamma: f64 },
    Prop41 { a1: f64, a2: f64, b: f64, g_norm: f64 },
    Thm42General { a1: f64, a2: f64, gamma: f64, g_norm: f64 },
    Thm42Gamma1 { a1: f64, a2: f64, gamma: f64, g_norm: f64 },
    Prop31Laplace { a1: f64, a2: f64, b: f64 },
}

impl BoundSpec {
    /// Serialized token of the family.
    pub fn token(&self) -> &'static str {
        match self {
            BoundSpec::Cor32 { .. } => "cor32",
            BoundSpec::Thm33General { .. } => "thm33_general",
            BoundSpec::Thm33Gamma1 { .. } => "thm33_gamma1",
            BoundSpec::Prop41 { .. } => "prop41",
            BoundSpec::Thm42General { .. } => "thm42_general",
            BoundSpec::Thm42Gamma1 { .. } => "thm42_gamma1",
            BoundSpec::Prop31Laplace { .. } => "prop31_laplace",
        }
    }

    /// True for the families whose left side is a tail probability of a
    /// real-valued normalized sum.
    pub fn wants_real_statistic(&self) -> bool {
        matches!(
            self,
            BoundSpec::Cor32 { .. } | BoundSpec::Prop41 { .. } | BoundSpec::Prop31Laplace { .. }
        )
    }

    /// True for the families whose left side involves a Hilbert norm.
    pub fn wants_hilbert_statistic(&self) -> bool {
        matches!(
            self,
            BoundSpec::Thm33General { .. }
                | BoundSpec::Thm33Gamma1 { .. }
                | BoundSpec::Thm42General { .. }
                | BoundSpec::Thm42Gamma1 { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let check_pos = |name: &'static str, v: f64| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("need a finite value > 0, got {v}")));
            }
            Ok(())
        };
        match *self {
            BoundSpec::Cor32 { a1, a2, b } | BoundSpec::Prop31Laplace { a1, a2, b } => {
                check_pos("a1", a1)?;
                check_pos("a2", a2)?;
                check_pos("b", b)
            }
            BoundSpec::Thm33General { a1, a2, gamma } => {
                check_pos("a1", a1)?;
                check_pos("a2", a2)?;
                check_pos("gamma", gamma)
            }
            BoundSpec::Thm33Gamma1 { a1, a2, gamma } => {
                check_pos("a1", a1)?;
                check_pos("a2", a2)?;
                if !(gamma >= 1.0) || !gamma.is_finite() {
                    return Err(Error::invalid(
                        "gamma",
                        format!("the fixed-exponent form needs gamma ≥ 1, got {gamma}"),
                    ));
                }
                Ok(())
            }
            BoundSpec::Prop41 { a1, a2, b, g_norm } => {
                check_pos("a1", a1)?;
                check_pos("a2", a2)?;
                check_pos("b", b)?;
                check_pos("g_norm", g_norm)
            }
            BoundSpec::Thm42General { a1, a2, gamma, g_norm } => {
                check_pos("a1", a1)?;
                check_pos("a2", a2)?;
                check_pos("gamma", gamma)?;
                check_pos("g_norm", g_norm)
            }
            BoundSpec::Thm42Gamma1 { a1, a2, gamma, g_norm } => {
                check_pos("a1", a1)?;
                check_pos("a2", a2)?;
                check_pos("g_norm", g_norm)?;
                if !(gamma >= 1.0) || !gamma.is_finite() {
                    return Err(Error::invalid(
                        "gamma",
                        format!("the fixed-exponent form needs gamma ≥ 1, got {gamma}"),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn thm33_value(a1: f64, a2: f64, gamma: f64, eps: f64, cube: &CubeSize) -> f64 {
    let r = rate_functional(cube);
    let x = eps * r;
    let e_tail = thm33_tail_exponent(gamma);
    let denom = (2.0 + 3.0 * gamma) * (1.0 + gamma);
    let e_rate = 2.0 * (1.0 + gamma - gamma * gamma) / denom;
    let e_eps = -gamma * (3.0 + 5.0 * gamma) / denom;
    let bracket = eps.powi(-2) + x.powf(e_tail) + r.powf(e_rate) * eps.powf(e_eps);
    a1 * (-a2 * x.powf(e_tail)).exp() * bracket
}

fn thm42_value(a1: f64, a2: f64, gamma: f64, g_norm: f64, eps: f64, cube: &CubeSize) -> f64 {
    let eff = cube.effective_sample_size();
    let m = (eps * eps * eff / g_norm).powf(gamma / (2.0 + 2.0 * gamma));
    let bracket = eps.powi(-2)
        + m
        + m.powf((4.0 + 5.0 * gamma) / (4.0 + 2.0 * gamma))
            * eps.powf(-3.0 * gamma / (2.0 + gamma))
            * (eff / g_norm).powf((1.0 - gamma) / (2.0 + gamma));
    a1 * bracket * (-a2 * m).exp()
}

/// Evaluates a bound family at tail level `eps` (Laplace argument `β` for
/// `prop31_laplace`) on the given cube size.
///
/// The value is the raw formula: it is *not* clipped to `[0, 1]`, since the
/// caller compares it against empirical probabilities (or log-Laplace
/// estimates) and a value above one simply means the bound is vacuous there.
/// The six tail forms require `eps > 0` and at least two sites; the Laplace
/// form accepts `eps ≥ 0` (and is exactly `0` at `eps = 0`).
pub fn bound_eval(spec: &BoundSpec, eps: f64, cube: &CubeSize) -> Result<f64> {
    spec.validate()?;
    let is_laplace = matches!(spec, BoundSpec::Prop31Laplace { .. });
    if is_laplace {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::invalid("eps", format!("need β ≥ 0, got {eps}")));
        }
    } else {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid("eps", format!("need eps > 0, got {eps}")));
        }
        if cube.sites <= 1.0 {
            return Err(Error::invalid(
                "cube",
                "tail bounds need more than one site (ln |I_n| must be positive)",
            ));
        }
    }
    let value = match *spec {
        BoundSpec::Cor32 { a1, a2, b } => {
            a1 * (-a2 * (eps / b) * rate_functional(cube)).exp()
        }
        BoundSpec::Thm33General { a1, a2, gamma } => thm33_value(a1, a2, gamma, eps, cube),
        // Delegating with gamma pinned to 1 makes the fixed-exponent form
        // agree bit for bit with the general form at gamma = 1.
        BoundSpec::Thm33Gamma1 { a1, a2, .. } => thm33_value(a1, a2, 1.0, eps, cube),
        BoundSpec::Prop41 { a1, a2, b, g_norm } => {
            let eff = cube.effective_sample_size();
            a1 * (-a2 * eps * eps * eff / (g_norm * b * b)).exp()
        }
        BoundSpec::Thm42General { a1, a2, gamma, g_norm } => {
            thm42_value(a1, a2, gamma, g_norm, eps, cube)
        }
        BoundSpec::Thm42Gamma1 { a1, a2, g_norm, .. } => {
            thm42_value(a1, a2, 1.0, g_norm, eps, cube)
        }
        BoundSpec::Prop31Laplace { a1, a2, b } => {
            let v = cube.sites;
            let n = cube.dim as f64;
            let bb = eps * b;
            let t1 = a1 * bb * bb * v * (1.0 + v.powf((n - 1.0) / n) * v.ln());
            let t2 = a1 * bb * v * (-a2 * bb.powf(-1.0 / n)).exp();
            let t3 = a1
                * bb.powf((n + 1.0) / n)
                * v
                * (-a2 * bb.powf(1.0 - (n + 1.0) / (n * n)) * v.powf((n - 1.0) / n)).exp();
            t1 + t2 + t3
        }
    };
    Ok(value)
}

// ---------------------------------------------------------------------------
// Monte Carlo statistics
// ---------------------------------------------------------------------------

/// What is computed from each replicate's field before thresholding.
///
/// All statistics are normalized by the site count `|I_n|`:
///
/// * `real_sum` — `| Σ_s ⟨X_s, e_1⟩ | / |I_n|`, the absolute average of the
///   first coefficient (a centered bounded real summand for the bounded
///   generators).
/// * `hilbert_norm_sum` — `‖ Σ_s X_s ‖_H / |I_n|`.
/// * `kernel_weighted_real_sum` — `| Σ_s ⟨Y_s, e_1⟩ · K(d(X_s, x)/h) | / |I_n|`.
/// * `kernel_weighted_norm_sum` — `‖ Σ_s Y_s · K(d(X_s, x)/h) ‖_H / |I_n|`.
///
/// The kernel-weighted variants are centered when the regression function is
/// zero and the noise is centered; recipes for tail runs should use a zero
/// regression function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "statistic", rename_all = "snake_case")]
pub enum TailStatistic {
    RealSum,
    HilbertNormSum,
    KernelWeightedRealSum {
        x: FunctionalElement,
        kernel: KernelSpec,
        bandwidth: f64,
        metric: PseudoMetric,
    },
    KernelWeightedNormSum {
        x: FunctionalElement,
        kernel: KernelSpec,
        bandwidth: f64,
        metric: PseudoMetric,
    },
}

impl TailStatistic {
    pub fn token(&self) -> &'static str {
        match self {
            TailStatistic::RealSum => "real_sum",
            TailStatistic::HilbertNormSum => "hilbert_norm_sum",
            TailStatistic::KernelWeightedRealSum { .. } => "kernel_weighted_real_sum",
            TailStatistic::KernelWeightedNormSum { .. } => "kernel_weighted_norm_sum",
        }
    }

    pub fn is_real_valued(&self) -> bool {
        matches!(
            self,
            TailStatistic::RealSum | TailStatistic::KernelWeightedRealSum { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        match self {
            TailStatistic::RealSum | TailStatistic::HilbertNormSum => Ok(()),
            TailStatistic::KernelWeightedRealSum { x, bandwidth, .. }
            | TailStatistic::KernelWeightedNormSum { x, bandwidth, .. } => {
                if x.is_empty() {
                    return Err(Error::invalid("x", "kernel center must have coefficients"));
                }
                if !(*bandwidth > 0.0) || !bandwidth.is_finite() {
                    return Err(Error::invalid(
                        "bandwidth",
                        format!("need a finite bandwidth > 0, got {bandwidth}"),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// How each replicate's data is produced.
///
/// * `field` — draw a spatial field from a generator and evaluate one of the
///   [`TailStatistic`] forms on it.
/// * `iid_signs` — independent `±1` per site, statistic `|Σ|/|I_n|`. Exists
///   so that runs can be checked against the exact binomial tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum TailRecipe {
    Field {
        generator: GeneratorSpec,
        psi: PsiSpec,
        noise_scale: f64,
        statistic: TailStatistic,
    },
    IidSigns,
}

impl TailRecipe {
    pub fn statistic_token(&self) -> &'static str {
        match self {
            TailRecipe::Field { statistic, .. } => statistic.token(),
            TailRecipe::IidSigns => "real_sum",
        }
    }

    pub fn is_real_valued(&self) -> bool {
        match self {
            TailRecipe::Field { statistic, .. } => statistic.is_real_valued(),
            TailRecipe::IidSigns => true,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TailRecipe::Field { statistic, noise_scale, .. } => {
                if !(*noise_scale >= 0.0) || !noise_scale.is_finite() {
                    return Err(Error::invalid(
                        "noise_scale",
                        format!("need ≥ 0, got {noise_scale}"),
                    ));
                }
                statistic.validate()
            }
            TailRecipe::IidSigns => Ok(()),
        }
    }
}

/// Checks that the recipe's statistic belongs to the bound family:
/// plain real averages go with `cor32`, `prop41`, and `prop31_laplace`;
/// kernel-weighted real averages with `prop41`; Hilbert norms with the
/// `thm33` forms; kernel-weighted Hilbert norms with the `thm42` forms.
pub fn check_statistic_bound(recipe: &TailRecipe, bound: &BoundSpec) -> Result<()> {
    let stat = recipe.statistic_token();
    let ok = match bound {
        BoundSpec::Cor32 { .. } | BoundSpec::Prop31Laplace { .. } => stat == "real_sum",
        BoundSpec::Prop41 { .. } => {
            stat == "real_sum" || stat == "kernel_weighted_real_sum"
        }
        BoundSpec::Thm33General { .. } | BoundSpec::Thm33Gamma1 { .. } => {
            stat == "hilbert_norm_sum"
        }
        BoundSpec::Thm42General { .. } | BoundSpec::Thm42Gamma1 { .. } => {
            stat == "hilbert_norm_sum" || stat == "kernel_weighted_norm_sum"
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::StatisticMismatch(format!(
            "statistic `{stat}` does not pair with bound family `{}`",
            bound.token()
        )))
    }
}

enum RawStat {
    /// Signed raw sum `Σ_s Z_s` of a real summand.
    Real(f64),
    /// Hilbert norm `‖ Σ_s Z_s ‖_H` of a vector summand.
    Norm(f64),
}

fn replicate_raw(
    recipe: &TailRecipe,
    cube: &LatticeCube,
    rung: u64,
    rep: u64,
    seed: u64,
) -> Result<RawStat> {
    match recipe {
        TailRecipe::IidSigns => {
            let mut rng = stream(seed, tag::REPLICATE, &[rung, rep]);
            let mut sum: i64 = 0;
            for _ in 0..cube.num_sites() {
                sum += if rng.gen::<bool>() { 1 } else { -1 };
            }
            Ok(RawStat::Real(sum as f64))
        }
        TailRecipe::Field { generator, psi, noise_scale, statistic } => {
            let mut spec = generator.clone();
            spec.seed = derive_seed(seed, &[rung, rep]);
            let sample = generate(&spec, psi, cube, *noise_scale)?;
            match statistic {
                TailStatistic::RealSum => {
                    let vals: Vec<f64> = sample.x.iter().map(|e| e.coeffs[0]).collect();
                    Ok(RawStat::Real(pairwise_sum(&vals)))
                }
                TailStatistic::HilbertNormSum => {
                    let mut acc = FunctionalElement::zeros(spec.basis.j_max);
                    for e in &sample.x {
                        acc.axpy(1.0, e);
                    }
                    Ok(RawStat::Norm(acc.h_norm()))
                }
                TailStatistic::KernelWeightedRealSum { x, kernel, bandwidth, metric } => {
                    let mut vals = Vec::with_capacity(sample.len());
                    for (xs, ys) in sample.x.iter().zip(&sample.y) {
                        let d = metric.distance(xs, x)?;
                        vals.push(ys.coeffs[0] * kernel_eval(kernel, d / bandwidth));
                    }
                    Ok(RawStat::Real(pairwise_sum(&vals)))
                }
                TailStatistic::KernelWeightedNormSum { x, kernel, bandwidth, metric } => {
                    let mut acc = FunctionalElement::zeros(spec.basis.j_max);
                    for (xs, ys) in sample.x.iter().zip(&sample.y) {
                        let d = metric.distance(xs, x)?;
                        acc.axpy(kernel_eval(kernel, d / bandwidth), ys);
                    }
                    Ok(RawStat::Norm(acc.h_norm()))
                }
            }
        }
    }
}

/// Normalized statistic values (one per replicate) on one cube.
fn tail_values(
    recipe: &TailRecipe,
    cube: &LatticeCube,
    rung: u64,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let v = cube.num_sites() as f64;
    (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let raw = replicate_raw(recipe, cube, rung, rep, seed)?;
            Ok(match raw {
                RawStat::Real(s) => s.abs() / v,
                RawStat::Norm(n) => n / v,
            })
        })
        .collect()
}

/// Signed raw sums (one per replicate) on one cube; real statistics only.
fn signed_sums(
    recipe: &TailRecipe,
    cube: &LatticeCube,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|rep| match replicate_raw(recipe, cube, 0, rep, seed)? {
            RawStat::Real(s) => Ok(s),
            RawStat::Norm(_) => Err(Error::StatisticMismatch(
                "log-Laplace estimation needs a real-valued summand".into(),
            )),
        })
        .collect()
}

/// One `(ε, cube)` cell of a tail run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub eps: f64,
    pub cube: CubeSize,
    /// Number of replicates with statistic `≥ eps` (an exact integer count).
    pub exceed: u64,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// `eps · R(n)`, the abscissa used by [`slope_diagnostic`].
    pub rate_value: f64,
    /// Paired bound value, when a bound spec was supplied.
    pub bound: Option<f64>,
}

/// Exceedance frequencies over an `ε`-grid and a ladder of cubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub statistic: String,
    pub replicates: usize,
    pub seed: u64,
    pub cells: Vec<TailCell>,
}

/// Estimates `P(statistic ≥ ε)` for every `(ε, cube)` pair by seeded Monte
/// Carlo. With `bound = Some(spec)`, each cell also carries the bound value
/// at that `(ε, cube)`; the statistic/bound pairing is checked first.
///
/// Requires at least 1000 replicates, a nonempty positive `ε`-grid, and a
/// nonempty ladder. Wilson intervals are at the 95% level.
pub fn empirical_tail(
    recipe: &TailRecipe,
    eps_grid: &[f64],
    ladder: &[LatticeCube],
    replicates: usize,
    seed: u64,
    bound: Option<&BoundSpec>,
) -> Result<TailReport> {
    recipe.validate()?;
    if replicates < 1000 {
        return Err(Error::invalid(
            "replicates",
            format!("tail estimation needs at least 1000 replicates, got {replicates}"),
        ));
    }
    if eps_grid.is_empty() {
        return Err(Error::invalid("eps_grid", "at least one tail level required"));
    }
    for &e in eps_grid {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::invalid("eps_grid", format!("tail levels must be > 0, got {e}")));
        }
    }
    if ladder.is_empty() {
        return Err(Error::invalid("ladder", "at least one cube required"));
    }
    if let Some(spec) = bound {
        if matches!(spec, BoundSpec::Prop31Laplace { .. }) {
            return Err(Error::StatisticMismatch(
                "the prop31_laplace form pairs with empirical_log_laplace, not tail runs".into(),
            ));
        }
        check_statistic_bound(recipe, spec)?;
    }
    let mut cells = Vec::with_capacity(eps_grid.len() * ladder.len());
    for (rung, cube) in ladder.iter().enumerate() {
        let values = tail_values(recipe, cube, rung as u64, replicates, seed)?;
        let size = CubeSize::from(cube);
        for &eps in eps_grid {
            let exceed = values.iter().filter(|&&v| v >= eps).count() as u64;
            let p_hat = exceed as f64 / replicates as f64;
            let (wilson_lo, wilson_hi) = wilson_interval(exceed, replicates as u64, WILSON_Z95);
            let bound_value = match bound {
                Some(spec) => Some(bound_eval(spec, eps, &size)?),
                None => None,
            };
            cells.push(TailCell {
                eps,
                cube: size,
                exceed,
                p_hat,
                wilson_lo,
                wilson_hi,
                rate_value: eps * rate_functional(&size),
                bound: bound_value,
            });
        }
    }
    Ok(TailReport {
        statistic: recipe.statistic_token().to_string(),
        replicates,
        seed,
        cells,
    })
}

/// Least-squares fit of `ln P̂` against `ε · R(n)` over the cells with
/// non-degenerate frequencies (`0 < P̂ < 1`). Requires at least four such
/// cells. A negative slope with high `R²` is the signature of exponential
/// tail decay in the expected rate.
pub fn slope_diagnostic(report: &TailReport) -> Result<LineFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for cell in &report.cells {
        if cell.p_hat > 0.0 && cell.p_hat < 1.0 {
            xs.push(cell.rate_value);
            ys.push(cell.p_hat.ln());
        }
    }
    if xs.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "slope diagnostic needs ≥ 4 cells with 0 < p_hat < 1, got {}",
            xs.len()
        )));
    }
    numeric::linear_fit(&xs, &ys)
}

/// Exact tail `P(|S_n| ≥ t)` for a sum `S_n` of `n` independent `±1` signs,
/// computed from binomial coefficients. Oracle for `iid_signs` runs.
pub fn binomial_symmetric_tail(n: u64, t: u64) -> f64 {
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut terms = Vec::new();
    for k in 0..=n {
        let s = 2.0 * k as f64 - n as f64;
        if s.abs() >= t as f64 {
            terms.push((numeric::ln_choose(n, k) - ln2n).exp());
        }
    }
    pairwise_sum(&terms).min(1.0)
}

// ---------------------------------------------------------------------------
// Log-Laplace estimation and the admissible-β region
// ---------------------------------------------------------------------------

/// The admissible range for `β·B` in the log-Laplace bound, evaluated
/// numerically from `(cube, B, C', c1)`. The limit is
/// `max( max(fractional_volume, inverse_volume),
///       min(constant_block, edge_decay) )` with
///
/// * `c_tilde = min(2^{−N}, c1·C'^{N/(N+1)}·2^{−(N+1)})`,
/// * `fractional_volume = c_tilde / |I_n|^{N/(N+1)}`,
/// * `inverse_volume = 1 / |I_n|`,
/// * `constant_block = (C'·c_tilde^{(N+1)/N²} / 2^{N+3})^{N²/(N+1)}`,
/// * `edge_decay = (c1·C' / 2^{N+2}) / |I_n|^{(N−1)/N}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRegion {
    pub c_tilde: f64,
    pub fractional_volume: f64,
    pub inverse_volume: f64,
    pub constant_block: f64,
    pub edge_decay: f64,
    pub limit: f64,
}

impl BetaRegion {
    /// Name of the term that achieves the limit.
    pub fn binding(&self) -> &'static str {
        if self.limit == self.fractional_volume {
            "fractional_volume"
        } else if self.limit == self.inverse_volume {
            "inverse_volume"
        } else if self.limit == self.constant_block {
            "constant_block"
        } else {
            "edge_decay"
        }
    }

    /// Rejects `β` with `|β|·B` above the limit, naming the binding term.
    pub fn check(&self, beta: f64, b: f64) -> Result<()> {
        if !beta.is_finite() {
            return Err(Error::invalid("beta", format!("need a finite β, got {beta}")));
        }
        let bb = beta.abs() * b;
        if bb > self.limit {
            return Err(Error::BetaOutsideRegion(format!(
                "|beta|*B = {:.6e} exceeds the admissible limit {:.6e} (binding term: {})",
                bb,
                self.limit,
                self.binding()
            )));
        }
        Ok(())
    }
}

/// Computes the admissible-β region for the log-Laplace bound. The cube must
/// have its smallest edge at least `2^{N+1}` and satisfy the aspect-ratio
/// condition `min edge ≥ C' · max edge`; `B`, `C' ∈ (0, 1]`, and `c1` are
/// the summand bound, aspect constant, and mixing decay rate.
pub fn admissible_beta_region(
    cube: &LatticeCube,
    b: f64,
    c_prime: f64,
    c1: f64,
) -> Result<BetaRegion> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid("b", format!("need a summand bound B > 0, got {b}")));
    }
    if !(c1 > 0.0) || !c1.is_finite() {
        return Err(Error::invalid("c1", format!("need a decay rate c1 > 0, got {c1}")));
    }
    let aspect = check_aspect_ratio(cube, c_prime)?;
    if !aspect.satisfied {
        return Err(Error::invalid(
            "cube",
            format!(
                "aspect-ratio condition fails: smallest edge {} < {} × largest edge {}",
                aspect.min_edge, c_prime, aspect.max_edge
            ),
        ));
    }
    let n = cube.dim() as f64;
    let min_required = (2.0f64).powf(n + 1.0);
    if (aspect.min_edge as f64) < min_required {
        return Err(Error::invalid(
            "cube",
            format!(
                "smallest edge {} is below the required 2^(N+1) = {min_required}",
                aspect.min_edge
            ),
        ));
    }
    let v = cube.num_sites() as f64;
    let c_tilde = (2.0f64).powf(-n).min(c1 * c_prime.powf(n / (n + 1.0)) * (2.0f64).powf(-(n + 1.0)));
    let fractional_volume = c_tilde / v.powf(n / (n + 1.0));
    let inverse_volume = 1.0 / v;
    let constant_block = (c_prime * c_tilde.powf((n + 1.0) / (n * n)) / (2.0f64).powf(n + 3.0))
        .powf(n * n / (n + 1.0));
    let edge_decay = (c1 * c_prime / (2.0f64).powf(n + 2.0)) / v.powf((n - 1.0) / n);
    let limit = fractional_volume.max(inverse_volume).max(constant_block.min(edge_decay));
    Ok(BetaRegion {
        c_tilde,
        fractional_volume,
        inverse_volume,
        constant_block,
        edge_decay,
        limit,
    })
}

/// One `β` cell of a log-Laplace run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCell {
    pub beta: f64,
    /// `ln( mean_i exp(β · S_i) )` over the replicate raw sums `S_i`.
    pub estimate: f64,
    /// Leave-one-out jackknife standard error of the estimate.
    pub jackknife_se: f64,
    /// Paired bound value at `|β|`.
    pub bound: f64,
}

/// Log-Laplace estimates over a `β`-grid on one cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceReport {
    pub cube: CubeSize,
    pub replicates: usize,
    pub seed: u64,
    pub region: BetaRegion,
    pub cells: Vec<LaplaceCell>,
}

/// Estimates `ln E exp(β Σ_s Z_s)` by seeded Monte Carlo for each `β` in the
/// grid, paired with the `prop31_laplace` bound at the supplied constants.
///
/// The recipe must produce a real-valued summand (`iid_signs` or a field
/// recipe with the `real_sum` statistic). Every nonzero `β` is checked
/// against the admissible region computed from `(cube, b, c_prime, c1)`;
/// a violation rejects the whole run naming the binding inequality. At
/// `β = 0` the estimate is exactly zero by construction. Negative `β` is
/// allowed (the bound applies to the negated summands with the same `B`).
pub fn empirical_log_laplace(
    recipe: &TailRecipe,
    beta_grid: &[f64],
    cube: &LatticeCube,
    b: f64,
    c_prime: f64,
    c1: f64,
    replicates: usize,
    seed: u64,
    bound: &BoundSpec,
) -> Result<LaplaceReport> {
    recipe.validate()?;
    if !matches!(bound, BoundSpec::Prop31Laplace { .. }) {
        return Err(Error::StatisticMismatch(format!(
            "log-Laplace runs pair with the prop31_laplace form, got `{}`",
            bound.token()
        )));
    }
    bound.validate()?;
    if !recipe.is_real_valued() || recipe.statistic_token() != "real_sum" {
        return Err(Error::StatisticMismatch(
            "log-Laplace estimation needs the plain real_sum statistic".into(),
        ));
    }
    if replicates < 100 {
        return Err(Error::invalid(
            "replicates",
            format!("log-Laplace estimation needs at least 100 replicates, got {replicates}"),
        ));
    }
    if beta_grid.is_empty() {
        return Err(Error::invalid("beta_grid", "at least one β required"));
    }
    let region = admissible_beta_region(cube, b, c_prime, c1)?;
    for &beta in beta_grid {
        if beta != 0.0 {
            region.check(beta, b)?;
        }
    }
    let sums = signed_sums(recipe, cube, replicates, seed)?;
    let m = replicates as f64;
    let size = CubeSize::from(cube);
    let mut cells = Vec::with_capacity(beta_grid.len());
    for &beta in beta_grid {
        let terms: Vec<f64> = sums.iter().map(|&s| beta * s).collect();
        let lse = numeric::log_sum_exp(&terms);
        let estimate = lse - m.ln();
        // Leave-one-out estimates via ln(e^lse − e^{x_i}) = lse + ln1p(−e^{x_i − lse}).
        let loo: Vec<f64> = terms
            .iter()
            .map(|&x| lse + (-(x - lse).exp()).ln_1p() - (m - 1.0).ln())
            .collect();
        let loo_mean = numeric::mean(&loo);
        let devs: Vec<f64> = loo.iter().map(|&t| (t - loo_mean) * (t - loo_mean)).collect();
        let jackknife_se = ((m - 1.0) / m * pairwise_sum(&devs)).sqrt();
        let bound_value = bound_eval(bound, beta.abs(), &size)?;
        cells.push(LaplaceCell { beta, estimate, jackknife_se, bound: bound_value });
    }
    Ok(LaplaceReport { cube: size, replicates, seed, region, cells })
}

// ---------------------------------------------------------------------------
// Exact product-covariance check on finite discrete joints
// ---------------------------------------------------------------------------

/// A finite joint law of `k` non-negative real variables. `supports[i]` are
/// the values of variable `i`; `probs` is the joint mass in row-major order
/// over the support indices (last variable fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    pub supports: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(supports: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let k = supports.len();
        if !(2..=6).contains(&k) {
            return Err(Error::invalid(
                "supports",
                format!("need between 2 and 6 variables, got {k}"),
            ));
        }
        let mut cells = 1usize;
        for (i, s) in supports.iter().enumerate() {
            if s.is_empty() || s.len() > 8 {
                return Err(Error::invalid(
                    "supports",
                    format!("variable {i} needs between 1 and 8 support points, got {}", s.len()),
                ));
            }
            for &v in s {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::invalid(
                        "supports",
                        format!("variable {i} has value {v}; values must be finite and ≥ 0"),
                    ));
                }
            }
            cells *= s.len();
        }
        if probs.len() != cells {
            return Err(Error::invalid(
                "probs",
                format!("expected {cells} joint masses, got {}", probs.len()),
            ));
        }
        let mut total = 0.0;
        for &p in &probs {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::invalid("probs", format!("masses must be ≥ 0, got {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "probs",
                format!("joint masses must sum to 1 (within 1e-9), got {total}"),
            ));
        }
        // Normalize exactly so downstream enumeration sees a probability law.
        let probs = probs.iter().map(|&p| p / total).collect();
        Ok(DiscreteJoint { supports, probs })
    }

    pub fn num_vars(&self) -> usize {
        self.supports.len()
    }

    fn sizes(&self) -> Vec<usize> {
        self.supports.iter().map(|s| s.len()).collect()
    }
}

/// Result of an exact product-covariance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbragimovReport {
    /// `|E ∏ Zᵢ − ∏ E Zᵢ|` by exact enumeration.
    pub lhs: f64,
    /// Largest dependence coefficient over the requested splits.
    pub alpha: f64,
    /// `(k−1) · alpha · ∏ ‖Zᵢ‖_∞`.
    pub rhs: f64,
    pub holds: bool,
    pub splits: Vec<usize>,
    /// Dependence coefficient of each requested split, in order.
    pub per_split: Vec<f64>,
}

/// Largest subset-enumeration size for the exact α computation.
const MAX_SPLIT_ATOMS: usize = 16;

/// Exact dependence coefficient `sup_{A,B} |P(A∩B) − P(A)P(B)|` between the
/// first `split` variables and the rest, from the aggregated joint matrix.
fn exact_alpha(joint: &DiscreteJoint, split: usize) -> Result<f64> {
    let sizes = joint.sizes();
    let left: usize = sizes[..split].iter().product();
    let right: usize = sizes[split..].iter().product();
    // Aggregate the joint law into a left-atoms × right-atoms matrix.
    let mut matrix = vec![vec![0.0f64; right]; left];
    let mut idx = vec![0usize; sizes.len()];
    for &p in &joint.probs {
        let mut a = 0usize;
        for i in 0..split {
            a = a * sizes[i] + idx[i];
        }
        let mut bcol = 0usize;
        for i in split..sizes.len() {
            bcol = bcol * sizes[i] + idx[i];
        }
        matrix[a][bcol] += p;
        for i in (0..sizes.len()).rev() {
            idx[i] += 1;
            if idx[i] < sizes[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    // Enumerate subsets of the smaller side; the optimal event on the other
    // side is closed-form (collect the positive excesses).
    let (rows, cols, transposed) =
        if left <= right { (left, right, false) } else { (right, left, true) };
    if rows > MAX_SPLIT_ATOMS {
        return Err(Error::SupportTooLarge(format!(
            "smaller split block has {rows} atoms; exact enumeration is capped at {MAX_SPLIT_ATOMS}"
        )));
    }
    let get = |r: usize, c: usize| if transposed { matrix[c][r] } else { matrix[r][c] };
    let col_marginal: Vec<f64> =
        (0..cols).map(|c| (0..rows).map(|r| get(r, c)).sum()).collect();
    let row_marginal: Vec<f64> =
        (0..rows).map(|r| (0..cols).map(|c| get(r, c)).sum()).collect();
    // Gray-code walk over subsets: consecutive subsets differ in one row, so
    // the per-column excess vector updates in O(cols).
    let mut excess = vec![0.0f64; cols];
    let mut best = 0.0f64;
    let mut prev_subset: usize = 0;
    for g in 1..(1usize << rows) {
        let subset = g ^ (g >> 1);
        let flipped_bit = subset ^ prev_subset;
        let row = flipped_bit.trailing_zeros() as usize;
        let sign = if subset & flipped_bit != 0 { 1.0 } else { -1.0 };
        for c in 0..cols {
            excess[c] += sign * (get(row, c) - row_marginal[row] * col_marginal[c]);
        }
        prev_subset = subset;
        // sup over events B of |Σ_{b∈B} excess_b|: take one sign's positive
        // part; the other sign gives the same value since Σ_b excess_b = 0.
        let mut pos = 0.0f64;
        let mut neg = 0.0f64;
        for &e in &excess {
            if e > 0.0 {
                pos += e;
            } else {
                neg -= e;
            }
        }
        best = best.max(pos.max(neg));
    }
    Ok(best)
}

/// Exact check of the product-covariance inequality
/// `|E ∏ Zᵢ − ∏ E Zᵢ| ≤ (k−1) · α · ∏ ‖Zᵢ‖_∞` for a finite discrete joint
/// law of non-negative bounded variables, where `α` is the largest
/// dependence coefficient over the requested split points (`split = s`
/// separates variables `0..s` from `s..k`). An empty `splits` defaults to
/// all `1..k`. The norms `‖Zᵢ‖_∞` are essential suprema (support values
/// with zero marginal mass are ignored).
pub fn ibragimov_check(joint: &DiscreteJoint, splits: &[usize]) -> Result<IbragimovReport> {
    let k = joint.num_vars();
    let splits: Vec<usize> =
        if splits.is_empty() { (1..k).collect() } else { splits.to_vec() };
    for &s in &splits {
        if s == 0 || s >= k {
            return Err(Error::invalid(
                "splits",
                format!("split points must lie in 1..{k}, got {s}"),
            ));
        }
    }
    let sizes = joint.sizes();
    // Exact expectations: E ∏ Zᵢ and the marginal means / essential sups.
    let mut idx = vec![0usize; k];
    let mut e_prod_terms = Vec::with_capacity(joint.probs.len());
    let mut marginal_mass = vec![vec![0.0f64; 8]; k];
    for &p in &joint.probs {
        let mut prod = p;
        for i in 0..k {
            prod *= joint.supports[i][idx[i]];
            marginal_mass[i][idx[i]] += p;
        }
        e_prod_terms.push(prod);
        for i in (0..k).rev() {
            idx[i] += 1;
            if idx[i] < sizes[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    let e_prod = pairwise_sum(&e_prod_terms);
    let mut prod_means = 1.0f64;
    let mut prod_sups = 1.0f64;
    for i in 0..k {
        let mean_i: f64 = joint.supports[i]
            .iter()
            .zip(&marginal_mass[i])
            .map(|(&v, &p)| v * p)
            .sum();
        let sup_i = joint.supports[i]
            .iter()
            .zip(&marginal_mass[i])
            .filter(|(_, &p)| p > 0.0)
            .map(|(&v, _)| v)
            .fold(0.0f64, f64::max);
        prod_means *= mean_i;
        prod_sups *= sup_i;
    }
    let lhs = (e_prod - prod_means).abs();
    let mut per_split = Vec::with_capacity(splits.len());
    for &s in &splits {
        per_split.push(exact_alpha(joint, s)?);
    }
    let alpha = per_split.iter().copied().fold(0.0f64, f64::max);
    let rhs = (k as f64 - 1.0) * alpha * prod_sups;
    Ok(IbragimovReport {
        lhs,
        alpha,
        rhs,
        holds: lhs <= rhs + 1e-12,
        splits,
        per_split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{CoeffDecay, GeneratorKind, InnovationKind};
    use crate::hilbert::{BasisFamily, BasisSpec, MeasureKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(actual: f64, expected: f64, rel: f64) {
        let scale = expected.abs().max(1e-300);
        assert!(
            (actual - expected).abs() <= rel * scale,
            "actual {actual} vs expected {expected} (rel {rel})"
        );
    }

    fn small_basis(j_max: usize) -> BasisSpec {
        BasisSpec::new(
            BasisFamily::Fourier,
            vec![[0.0, 1.0]],
            MeasureKind::Lebesgue,
            j_max,
        )
        .unwrap()
    }

    fn ma_generator(q: u32, seed: u64) -> GeneratorSpec {
        GeneratorSpec::new(
            GeneratorKind::FunctionalMa { q },
            small_basis(4),
            CoeffDecay { d0: 1.0, d1: 1.0 },
            InnovationKind::TruncatedGaussian { cutoff: 2.5 },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn cor32_direct_substitution() {
        let cube = CubeSize::new((4.0f64).exp(), 1).unwrap();
        let spec = BoundSpec::Cor32 { a1: 1.0, a2: 1.0, b: 1.0 };
        let value = bound_eval(&spec, 1.0, &cube).unwrap();
        let expected = (-(4.0f64).exp() / 16.0).exp();
        assert_close(value, expected, 1e-12);
    }

    #[test]
    fn prop41_direct_substitution() {
        let cube = CubeSize::new(100.0, 1).unwrap();
        let spec = BoundSpec::Prop41 { a1: 1.0, a2: 1.0, b: 1.0, g_norm: 10.0 };
        let value = bound_eval(&spec, 1.0, &cube).unwrap();
        assert_close(value, (-10.0f64).exp(), 1e-12);
    }

    #[test]
    fn thm33_exponent_arithmetic() {
        assert_eq!(thm33_tail_exponent(2.0), 0.5);
        assert_eq!(thm33_tail_exponent(1.0), 0.4);
    }

    #[test]
    fn thm33_gamma1_formula_spot_check() {
        // Independent transcription with the fixed exponents 2/5, 1/5, -4/5.
        let cube = CubeSize::new(1.0e4, 2).unwrap();
        let r = 100.0 / (1.0e4f64).ln().powi(2);
        let (a1, a2, eps) = (1.3, 0.7, 0.8);
        let x: f64 = eps * r;
        let expected = a1
            * (-a2 * x.powf(0.4)).exp()
            * (eps.powi(-2) + x.powf(0.4) + r.powf(0.2) * eps.powf(-0.8));
        let spec = BoundSpec::Thm33Gamma1 { a1, a2, gamma: 1.0 };
        assert_close(bound_eval(&spec, eps, &cube).unwrap(), expected, 1e-12);
    }

    #[test]
    fn thm42_gamma1_formula_spot_check() {
        // Independent transcription: m = (eps² eff / G)^{1/4}, bracket
        // eps⁻² + m + m^{3/2}/eps.
        let cube = CubeSize::new(1.0e4, 2).unwrap();
        let (a1, a2, g_norm, eps) = (1.0, 1.0, 2.0, 1.0);
        let m = (eps * eps * 100.0 / g_norm as f64).powf(0.25);
        let expected = a1 * (eps.powi(-2) + m + m.powf(1.5) / eps) * (-a2 * m).exp();
        let spec = BoundSpec::Thm42Gamma1 { a1, a2, gamma: 1.0, g_norm };
        assert_close(bound_eval(&spec, eps, &cube).unwrap(), expected, 1e-12);
    }

    #[test]
    fn laplace_formula_spot_check() {
        let cube = CubeSize::new(1024.0, 2).unwrap();
        let spec = BoundSpec::Prop31Laplace { a1: 1.0, a2: 1.0, b: 1.0 };
        let beta = 1.0e-3;
        let v = 1024.0f64;
        let t1 = beta * beta * v * (1.0 + v.sqrt() * v.ln());
        let t2 = beta * v * (-(beta.powf(-0.5))).exp();
        let t3 = beta.powf(1.5) * v * (-(beta.powf(0.25)) * v.sqrt()).exp();
        assert_close(bound_eval(&spec, beta, &cube).unwrap(), t1 + t2 + t3, 1e-12);
    }

    #[test]
    fn gamma1_forms_match_general_at_gamma_one() {
        let cubes = [
            CubeSize::new(256.0, 2).unwrap(),
            CubeSize::new(4096.0, 2).unwrap(),
            CubeSize::new(100.0, 1).unwrap(),
        ];
        for cube in &cubes {
            for &eps in &[0.3, 1.0, 2.5] {
                let g33 = BoundSpec::Thm33General { a1: 1.3, a2: 0.7, gamma: 1.0 };
                let f33 = BoundSpec::Thm33Gamma1 { a1: 1.3, a2: 0.7, gamma: 1.0 };
                assert_eq!(
                    bound_eval(&g33, eps, cube).unwrap().to_bits(),
                    bound_eval(&f33, eps, cube).unwrap().to_bits()
                );
                let g42 =
                    BoundSpec::Thm42General { a1: 0.9, a2: 1.1, gamma: 1.0, g_norm: 2.0 };
                let f42 =
                    BoundSpec::Thm42Gamma1 { a1: 0.9, a2: 1.1, gamma: 1.0, g_norm: 2.0 };
                assert_eq!(
                    bound_eval(&g42, eps, cube).unwrap().to_bits(),
                    bound_eval(&f42, eps, cube).unwrap().to_bits()
                );
            }
        }
        // γ < 1 is rejected for the fixed-exponent forms.
        let bad = BoundSpec::Thm33Gamma1 { a1: 1.0, a2: 1.0, gamma: 0.8 };
        assert!(bound_eval(&bad, 1.0, &cubes[0]).is_err());
    }

    #[test]
    fn tail_bounds_positive_and_monotone_on_grid() {
        // Abstract ladder large enough that the exponential factor dominates
        // the polynomial prefactors for every sampled gamma.
        let ladder: Vec<CubeSize> = [1u64 << 10, 1 << 12, 1 << 14]
            .iter()
            .map(|&e| CubeSize::new((e * e) as f64, 2).unwrap())
            .collect();
        let eps_grid = [0.25, 0.5, 1.0, 2.0, 4.0];
        let mut forms = vec![
            BoundSpec::Cor32 { a1: 1.0, a2: 1.0, b: 1.0 },
            BoundSpec::Thm33Gamma1 { a1: 1.0, a2: 1.0, gamma: 1.0 },
            BoundSpec::Thm42Gamma1 { a1: 1.0, a2: 1.0, gamma: 1.0, g_norm: 2.0 },
        ];
        for &gamma in &[0.5, 1.0, 2.0] {
            forms.push(BoundSpec::Thm33General { a1: 1.0, a2: 1.0, gamma });
            forms.push(BoundSpec::Thm42General { a1: 1.0, a2: 1.0, gamma, g_norm: 2.0 });
        }
        for form in &forms {
            // Decreasing in eps at each rung.
            for cube in &ladder {
                let vals: Vec<f64> = eps_grid
                    .iter()
                    .map(|&e| bound_eval(form, e, cube).unwrap())
                    .collect();
                for v in &vals {
                    assert!(*v > 0.0, "{} non-positive", form.token());
                }
                for w in vals.windows(2) {
                    assert!(
                        w[1] < w[0],
                        "{} not decreasing in eps: {:?}",
                        form.token(),
                        vals
                    );
                }
            }
            // Decreasing along the ladder at each eps.
            for &eps in &eps_grid {
                let vals: Vec<f64> = ladder
                    .iter()
                    .map(|c| bound_eval(form, eps, c).unwrap())
                    .collect();
                for w in vals.windows(2) {
                    assert!(
                        w[1] < w[0],
                        "{} not decreasing along the ladder at eps={eps}: {:?}",
                        form.token(),
                        vals
                    );
                }
            }
        }
        // The pure-Gaussian-exponent form decays so fast that the abstract
        // ladder above underflows it to zero; its grid is moderate instead.
        let prop41 = BoundSpec::Prop41 { a1: 1.0, a2: 1.0, b: 1.0, g_norm: 2.0 };
        let moderate: Vec<CubeSize> = [64.0, 256.0, 1024.0]
            .iter()
            .map(|&s| CubeSize::new(s, 2).unwrap())
            .collect();
        for cube in &moderate {
            let vals: Vec<f64> =
                eps_grid.iter().map(|&e| bound_eval(&prop41, e, cube).unwrap()).collect();
            for v in &vals {
                assert!(*v > 0.0, "prop41 non-positive");
            }
            for w in vals.windows(2) {
                assert!(w[1] < w[0], "prop41 not decreasing in eps: {vals:?}");
            }
        }
        for &eps in &eps_grid {
            let vals: Vec<f64> =
                moderate.iter().map(|c| bound_eval(&prop41, eps, c).unwrap()).collect();
            for w in vals.windows(2) {
                assert!(w[1] < w[0], "prop41 not decreasing along the ladder: {vals:?}");
            }
        }
    }

    #[test]
    fn laplace_bound_zero_at_zero_and_increasing() {
        let cube = CubeSize::new(1024.0, 2).unwrap();
        let spec = BoundSpec::Prop31Laplace { a1: 1.0, a2: 1.0, b: 1.0 };
        assert_eq!(bound_eval(&spec, 0.0, &cube).unwrap(), 0.0);
        let betas = [1.0e-4, 3.0e-4, 1.0e-3, 3.0e-3];
        let vals: Vec<f64> = betas.iter().map(|&b| bound_eval(&spec, b, &cube).unwrap()).collect();
        for (i, v) in vals.iter().enumerate() {
            assert!(*v > 0.0, "beta={} gave {v}", betas[i]);
        }
        for w in vals.windows(2) {
            assert!(w[1] > w[0], "not increasing in beta: {vals:?}");
        }
        // Also check the N=1 edge of the third term at beta = 0.
        let line = CubeSize::new(64.0, 1).unwrap();
        assert_eq!(bound_eval(&spec, 0.0, &line).unwrap(), 0.0);
    }

    #[test]
    fn beta_region_square_32_oracle() {
        let cube = LatticeCube::new(vec![32, 32]).unwrap();
        let region = admissible_beta_region(&cube, 1.0, 1.0, 1.0).unwrap();
        assert_close(region.c_tilde, 0.125, 1e-15);
        // Hand evaluation: c_tilde/V^{2/3} = 2^{-3-20/3} and the constant
        // block term (2^{-9/4}/2^5)^{4/3} both collapse to 2^{-29/3}, which
        // is the limit; the two terms tie up to one ulp.
        let expected = (2.0f64).powf(-29.0 / 3.0);
        assert_close(region.limit, expected, 1e-14);
        assert_close(region.fractional_volume, expected, 1e-14);
        assert_close(region.constant_block, expected, 1e-14);
        let binding = region.binding();
        assert!(
            binding == "fractional_volume" || binding == "constant_block",
            "unexpected binding term {binding}"
        );
        // 1% above the limit is rejected naming the binding term; 1% below passes.
        let above = 1.01 * region.limit;
        let err = region.check(above, 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("exceeds the admissible limit"), "message: {msg}");
        region.check(0.99 * region.limit, 1.0).unwrap();
        region.check(region.limit, 1.0).unwrap();
    }

    #[test]
    fn beta_region_preconditions() {
        // Aspect-ratio violation.
        let skew = LatticeCube::new(vec![8, 32]).unwrap();
        assert!(admissible_beta_region(&skew, 1.0, 1.0, 1.0).is_err());
        // Smallest edge below 2^{N+1}.
        let tiny = LatticeCube::new(vec![4, 4]).unwrap();
        assert!(admissible_beta_region(&tiny, 1.0, 1.0, 1.0).is_err());
        // A relaxed aspect constant admits the skewed cube.
        admissible_beta_region(&skew, 1.0, 0.25, 1.0).unwrap();
    }

    #[test]
    fn tail_iid_signs_matches_binomial_oracle() {
        let cube = LatticeCube::new(vec![100]).unwrap();
        let eps_grid: Vec<f64> = (1..=12).map(|m| (2 * m) as f64 / 100.0).collect();
        let report =
            empirical_tail(&TailRecipe::IidSigns, &eps_grid, &[cube], 4000, 41, None).unwrap();
        assert_eq!(report.cells.len(), 12);
        let mut contained = 0;
        for (m, cell) in report.cells.iter().enumerate() {
            let exact = binomial_symmetric_tail(100, 2 * (m as u64 + 1));
            assert!(cell.p_hat >= 0.0 && cell.p_hat <= 1.0);
            if cell.wilson_lo <= exact && exact <= cell.wilson_hi {
                contained += 1;
            }
        }
        assert!(
            contained == 12,
            "binomial oracle outside the Wilson interval in {} of 12 cells",
            12 - contained
        );
    }

    #[test]
    fn tail_above_summand_bound_is_zero() {
        let cube = LatticeCube::new(vec![50]).unwrap();
        let report =
            empirical_tail(&TailRecipe::IidSigns, &[1.5], &[cube], 1000, 7, None).unwrap();
        assert_eq!(report.cells[0].exceed, 0);
        assert_eq!(report.cells[0].p_hat, 0.0);
    }

    #[test]
    fn tail_ma_monotone_in_eps_and_volume() {
        let recipe = TailRecipe::Field {
            generator: ma_generator(1, 0),
            psi: PsiSpec::zero(),
            noise_scale: 0.0,
            statistic: TailStatistic::RealSum,
        };
        let ladder =
            vec![LatticeCube::new(vec![8, 8]).unwrap(), LatticeCube::new(vec![16, 16]).unwrap()];
        let eps_grid = [0.1, 0.2, 0.3];
        let report = empirical_tail(&recipe, &eps_grid, &ladder, 1500, 11, None).unwrap();
        // Cells are ordered rung-major; within a rung p_hat decreases in eps,
        // and between rungs it decreases at fixed eps.
        let p = |rung: usize, i: usize| report.cells[rung * 3 + i].p_hat;
        for rung in 0..2 {
            assert!(p(rung, 0) >= p(rung, 1) && p(rung, 1) >= p(rung, 2));
            assert!(p(rung, 0) > p(rung, 2), "tail grid degenerate at rung {rung}");
        }
        for i in 0..3 {
            assert!(p(0, i) >= p(1, i), "larger cube has larger tail at eps index {i}");
        }
        assert!(p(0, 0) > p(1, 0));
    }

    #[test]
    fn tail_pairs_with_compatible_bound_values() {
        let recipe = TailRecipe::Field {
            generator: ma_generator(1, 3),
            psi: PsiSpec::zero(),
            noise_scale: 0.0,
            statistic: TailStatistic::RealSum,
        };
        let spec = BoundSpec::Cor32 { a1: 2.0, a2: 0.3, b: 4.5 };
        let ladder = vec![LatticeCube::new(vec![8, 8]).unwrap()];
        let report = empirical_tail(&recipe, &[0.1, 0.2], &ladder, 1000, 5, Some(&spec)).unwrap();
        for cell in &report.cells {
            let expected = bound_eval(&spec, cell.eps, &cell.cube).unwrap();
            assert_eq!(cell.bound, Some(expected));
        }
    }

    #[test]
    fn tail_rejects_mismatched_statistic_and_low_replicates() {
        let hilbert_recipe = TailRecipe::Field {
            generator: ma_generator(1, 3),
            psi: PsiSpec::zero(),
            noise_scale: 0.0,
            statistic: TailStatistic::HilbertNormSum,
        };
        let cor = BoundSpec::Cor32 { a1: 1.0, a2: 1.0, b: 1.0 };
        let ladder = vec![LatticeCube::new(vec![8, 8]).unwrap()];
        let err = empirical_tail(&hilbert_recipe, &[0.1], &ladder, 1000, 1, Some(&cor))
            .unwrap_err();
        assert!(matches!(err, Error::StatisticMismatch(_)));
        let thm = BoundSpec::Thm33Gamma1 { a1: 1.0, a2: 1.0, gamma: 1.0 };
        let err2 = empirical_tail(&TailRecipe::IidSigns, &[0.1], &ladder, 1000, 1, Some(&thm))
            .unwrap_err();
        assert!(matches!(err2, Error::StatisticMismatch(_)));
        let err3 = empirical_tail(&TailRecipe::IidSigns, &[0.1], &ladder, 999, 1, None)
            .unwrap_err();
        assert!(matches!(err3, Error::InvalidParameter { .. }));
    }

    #[test]
    fn slope_diagnostic_recovers_synthetic_line() {
        let mk_cell = |rate_value: f64, p_hat: f64| TailCell {
            eps: 1.0,
            cube: CubeSize::new(100.0, 1).unwrap(),
            exceed: 0,
            p_hat,
            wilson_lo: 0.0,
            wilson_hi: 1.0,
            rate_value,
            bound: None,
        };
        let rates = [0.3, 0.5, 0.8, 1.2, 1.7];
        let report = TailReport {
            statistic: "real_sum".into(),
            replicates: 1000,
            seed: 0,
            cells: rates.iter().map(|&r| mk_cell(r, (-2.0 * r).exp())).collect(),
        };
        let fit = slope_diagnostic(&report).unwrap();
        assert_close(fit.slope, -2.0, 1e-12);
        assert!(fit.r_squared > 1.0 - 1e-12);
        // Constant frequencies give slope zero with a perfectly flat fit.
        let flat = TailReport {
            statistic: "real_sum".into(),
            replicates: 1000,
            seed: 0,
            cells: rates.iter().map(|&r| mk_cell(r, 0.37)).collect(),
        };
        let flat_fit = slope_diagnostic(&flat).unwrap();
        assert!(flat_fit.slope.abs() <= 1e-14, "flat slope {}", flat_fit.slope);
        // Degenerate cells (p_hat = 0 or 1) are excluded; too few remain.
        let degenerate = TailReport {
            statistic: "real_sum".into(),
            replicates: 1000,
            seed: 0,
            cells: vec![mk_cell(0.3, 0.0), mk_cell(0.5, 1.0), mk_cell(0.8, 0.5)],
        };
        assert!(slope_diagnostic(&degenerate).is_err());
    }

    #[test]
    fn laplace_zero_beta_exact_and_symmetric() {
        let cube = LatticeCube::new(vec![8, 8]).unwrap();
        let bound = BoundSpec::Prop31Laplace { a1: 1.0, a2: 1.0, b: 1.0 };
        let report = empirical_log_laplace(
            &TailRecipe::IidSigns,
            &[-0.01, 0.0, 0.01],
            &cube,
            1.0,
            1.0,
            1.0,
            2000,
            13,
            &bound,
        )
        .unwrap();
        let by_beta =
            |b: f64| report.cells.iter().find(|c| c.beta == b).unwrap().clone();
        let zero = by_beta(0.0);
        assert_eq!(zero.estimate, 0.0);
        assert_eq!(zero.bound, 0.0);
        let plus = by_beta(0.01);
        let minus = by_beta(-0.01);
        // Same-law summands: the two estimates agree within jackknife error.
        assert!(
            (plus.estimate - minus.estimate).abs()
                <= 3.0 * (plus.jackknife_se + minus.jackknife_se),
            "estimates {} vs {} with ses {} / {}",
            plus.estimate,
            minus.estimate,
            plus.jackknife_se,
            minus.jackknife_se
        );
        // Both carry the same paired bound (evaluated at |beta|).
        assert_eq!(plus.bound, minus.bound);
    }

    #[test]
    fn laplace_estimate_under_hoeffding_envelope() {
        let cube = LatticeCube::new(vec![8, 8]).unwrap();
        let bound = BoundSpec::Prop31Laplace { a1: 1.0, a2: 1.0, b: 1.0 };
        let beta = 0.01;
        let report = empirical_log_laplace(
            &TailRecipe::IidSigns,
            &[beta],
            &cube,
            1.0,
            1.0,
            1.0,
            2000,
            13,
            &bound,
        )
        .unwrap();
        let cell = &report.cells[0];
        // Exact value: 64 · ln cosh(0.01) ≈ 3.2e-3; envelope β²B²V = 6.4e-3.
        let envelope = beta * beta * 64.0;
        assert!(
            cell.estimate <= envelope,
            "estimate {} above the envelope {envelope}",
            cell.estimate
        );
        let exact = 64.0 * beta.cosh().ln();
        assert!(
            (cell.estimate - exact).abs() <= 4.0 * cell.jackknife_se.max(1e-4),
            "estimate {} vs exact {exact} (se {})",
            cell.estimate,
            cell.jackknife_se
        );
    }

    #[test]
    fn laplace_rejects_beta_outside_region() {
        let cube = LatticeCube::new(vec![32, 32]).unwrap();
        let region = admissible_beta_region(&cube, 1.0, 1.0, 1.0).unwrap();
        let bound = BoundSpec::Prop31Laplace { a1: 1.0, a2: 1.0, b: 1.0 };
        let err = empirical_log_laplace(
            &TailRecipe::IidSigns,
            &[1.01 * region.limit],
            &cube,
            1.0,
            1.0,
            1.0,
            200,
            3,
            &bound,
        )
        .unwrap_err();
        match err {
            Error::BetaOutsideRegion(msg) => {
                assert!(msg.contains("exceeds the admissible limit"), "message: {msg}")
            }
            other => panic!("expected BetaOutsideRegion, got {other}"),
        }
        // A Hilbert statistic is rejected up front.
        let hilbert_recipe = TailRecipe::Field {
            generator: ma_generator(1, 3),
            psi: PsiSpec::zero(),
            noise_scale: 0.0,
            statistic: TailStatistic::HilbertNormSum,
        };
        let err2 = empirical_log_laplace(
            &hilbert_recipe,
            &[1.0e-4],
            &cube,
            1.0,
            1.0,
            1.0,
            200,
            3,
            &bound,
        )
        .unwrap_err();
        assert!(matches!(err2, Error::StatisticMismatch(_)));
    }

    #[test]
    fn ibragimov_independent_pair_has_zero_gap() {
        let joint = DiscreteJoint::new(
            vec![vec![0.0, 1.0], vec![0.5, 2.0]],
            vec![0.3 * 0.6, 0.3 * 0.4, 0.7 * 0.6, 0.7 * 0.4],
        )
        .unwrap();
        let report = ibragimov_check(&joint, &[]).unwrap();
        assert!(report.lhs <= 1e-15, "lhs {}", report.lhs);
        assert!(report.holds);
    }

    #[test]
    fn ibragimov_correlated_bernoulli_pair_is_tight() {
        let joint = DiscreteJoint::new(
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![0.5, 0.0, 0.0, 0.5],
        )
        .unwrap();
        let report = ibragimov_check(&joint, &[1]).unwrap();
        assert_eq!(report.lhs, 0.25);
        assert_eq!(report.alpha, 0.25);
        assert_eq!(report.rhs, 0.25);
        assert!(report.holds);
    }

    #[test]
    fn ibragimov_random_joints_always_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x49_42_52_41);
        for trial in 0..1000 {
            let k = 2 + (trial % 2);
            let sizes: Vec<usize> = (0..k).map(|_| 2 + rng.gen_range(0..2)).collect();
            let supports: Vec<Vec<f64>> = sizes
                .iter()
                .map(|&s| (0..s).map(|_| rng.gen_range(0.0..2.0)).collect())
                .collect();
            let cells: usize = sizes.iter().product();
            let mut probs: Vec<f64> = (0..cells).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= total;
            }
            let joint = DiscreteJoint::new(supports, probs).unwrap();
            let report = ibragimov_check(&joint, &[]).unwrap();
            assert!(
                report.holds,
                "trial {trial}: lhs {} > rhs {} (alpha {})",
                report.lhs, report.rhs, report.alpha
            );
        }
    }

    #[test]
    fn ibragimov_rejects_bad_inputs() {
        // Negative support value.
        assert!(DiscreteJoint::new(
            vec![vec![-0.5, 1.0], vec![0.0, 1.0]],
            vec![0.25, 0.25, 0.25, 0.25],
        )
        .is_err());
        // Mass not summing to one.
        assert!(DiscreteJoint::new(
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![0.5, 0.5, 0.5, 0.5],
        )
        .is_err());
        // Exact alpha capped when the smaller split block is too large:
        // six variables with four support points each give 4³ = 64 atoms
        // on each side of the middle split.
        let supports: Vec<Vec<f64>> = (0..6).map(|_| vec![0.0, 0.5, 1.0, 1.5]).collect();
        let cells = 4096;
        let probs = vec![1.0 / cells as f64; cells];
        let joint = DiscreteJoint::new(supports, probs).unwrap();
        let err = ibragimov_check(&joint, &[3]).unwrap_err();
        assert!(matches!(err, Error::SupportTooLarge(_)));
        // The outermost split keeps one side small and still works.
        let report = ibragimov_check(&joint, &[1]).unwrap();
        assert!(report.holds);
    }

    #[test]
    fn binomial_tail_reference_values() {
        // P(|S_100| ≥ 2) = 1 − P(S = 0) = 1 − C(100,50)/2^100.
        let p_center = (numeric::ln_choose(100, 50) - 100.0 * std::f64::consts::LN_2).exp();
        assert_close(binomial_symmetric_tail(100, 2), 1.0 - p_center, 1e-12);
        // P(|S_4| ≥ 4) = 2/16.
        assert_close(binomial_symmetric_tail(4, 4), 0.125, 1e-12);
        // Threshold 0 is certain.
        assert_eq!(binomial_symmetric_tail(10, 0), 1.0);
    }

    #[test]
    fn tail_report_is_deterministic() {
        let recipe = TailRecipe::Field {
            generator: ma_generator(2, 9),
            psi: PsiSpec::zero(),
            noise_scale: 0.1,
            statistic: TailStatistic::HilbertNormSum,
        };
        let ladder = vec![LatticeCube::new(vec![6, 6]).unwrap()];
        let a = empirical_tail(&recipe, &[0.2, 0.4], &ladder, 1000, 99, None).unwrap();
        let b = empirical_tail(&recipe, &[0.2, 0.4], &ladder, 1000, 99, None).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

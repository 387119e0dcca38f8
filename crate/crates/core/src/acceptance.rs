//! End-to-end verification suite: ten self-contained criteria covering the
//! partition identities, covering validity, bound oracles, dominance ladders,
//! estimator exactness, rate monotonicity and determinism.
//!
//! Each criterion is a pure function returning a [`CriterionResult`] with a
//! pass/fail verdict, a detail string carrying the pinned tolerances and the
//! measured quantities, and the elapsed wall time judged against the
//! criterion's runtime budget (where one is pinned). All randomness is
//! drawn from fixed seeds recorded here, so the suite is reproducible and
//! thread-count independent.
//!
//! [`Suite::Quick`] runs every criterion at its pinned scale; [`Suite::Smoke`]
//! shrinks the Monte Carlo budgets (same logic, reduced replicates) for fast
//! in-development runs. The acceptance gate is the Quick suite.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::concentration::{
    binomial_symmetric_tail, bound_eval, empirical_tail, slope_diagnostic, BoundSpec, TailRecipe,
    TailStatistic,
};
use crate::error::{Error, Result};
use crate::experiments::{
    rate_csv, run_laplace_ladder, run_rate_ladder, run_tail_ladder, schedule_report, tail_csv,
    BandwidthSchedule, LadderSpec, LaplaceLadderConfig, MixingMode, PowerLawModel,
    RadiusSchedule, RateLadderConfig, ReportMeta, TailLadderConfig,
};
use crate::fields::{self, CoeffDecay, GeneratorKind, GeneratorSpec, InnovationKind, PsiSpec};
use crate::hilbert::{
    build_covering, BasisFamily, BasisSpec, FunctionalElement, LipschitzBall, MeasureKind,
    PseudoMetric, DEFAULT_CENTER_CAP,
};
use crate::lattice::{block_cover, cantor_partition, CubeSize, LatticeCube};
use crate::numeric;
use crate::regression::{f_hat, g_hat, m_x, psi_hat, EstimatorConfig, KernelSpec, SmallBallPlan};
use crate::rng::{stream, tag};

/// Scale of an acceptance run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Full pinned scale; this is the gate.
    Quick,
    /// Reduced Monte Carlo budgets for fast iteration.
    Smoke,
}

impl Suite {
    /// Scales a replicate count down for the smoke suite (floor of 50).
    fn scale(&self, full: usize) -> usize {
        match self {
            Suite::Quick => full,
            Suite::Smoke => (full / 5).max(50),
        }
    }
}

/// Verdict of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    /// Pinned tolerances and the measured quantities.
    pub details: String,
    pub seconds: f64,
    /// Pinned runtime budget, where the criterion has one.
    pub budget_seconds: Option<f64>,
}

impl CriterionResult {
    /// One pass/fail line: id, verdict, timing against budget, name, details.
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let budget = match self.budget_seconds {
            Some(b) => format!("{:.1}s/{:.0}s", self.seconds, b),
            None => format!("{:.1}s", self.seconds),
        };
        format!("criterion {:02}  {}  [{}]  {}: {}", self.id, verdict, budget, self.name, self.details)
    }
}

/// Results of a full suite run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub results: Vec<CriterionResult>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.results.iter().map(CriterionResult::line).collect()
    }
}

type Check = (bool, String);

fn finish(
    id: u8,
    name: &'static str,
    budget_seconds: Option<f64>,
    started: Instant,
    outcome: Result<Check>,
) -> CriterionResult {
    let seconds = started.elapsed().as_secs_f64();
    let (mut passed, details) = match outcome {
        Ok((ok, details)) => (ok, details),
        Err(e) => (false, format!("errored: {e}")),
    };
    if let Some(budget) = budget_seconds {
        if seconds >= budget {
            passed = false;
        }
    }
    CriterionResult { id, name, passed, details, seconds, budget_seconds }
}

/// Runs all ten criteria in order.
pub fn run_all(suite: Suite) -> SuiteReport {
    let runners: &[fn(Suite) -> CriterionResult] = &[
        criterion_01_partition_identities,
        criterion_02_covering_validity,
        criterion_03_tail_binomial_oracle,
        criterion_04_covariance_factorization,
        criterion_05_real_tail_dominance,
        criterion_06_norm_tail_dominance,
        criterion_07_log_laplace_dominance,
        criterion_08_estimator_exactness,
        criterion_09_rate_ladder_monotonicity,
        criterion_10_determinism,
    ];
    SuiteReport { suite, results: runners.iter().map(|f| f(suite)).collect() }
}

// ---------------------------------------------------------------------------
// Shared generators
// ---------------------------------------------------------------------------

fn fourier_basis(j_max: usize) -> BasisSpec {
    BasisSpec::new(BasisFamily::Fourier, vec![[0.0, 1.0]], MeasureKind::Lebesgue, j_max)
        .expect("unit-interval Fourier basis is valid")
}

fn ma1_generator(j_max: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec::new(
        GeneratorKind::FunctionalMa { q: 1 },
        fourier_basis(j_max),
        CoeffDecay { d0: 1.0, d1: 1.0 },
        InnovationKind::TruncatedGaussian { cutoff: 2.5 },
        seed,
    )
    .expect("moving-average generator spec is valid")
}

fn squares(edges: &[u32]) -> Vec<LatticeCube> {
    edges.iter().map(|&e| LatticeCube::square(2, e).expect("positive edges")).collect()
}

fn lines(edges: &[u32]) -> Vec<LatticeCube> {
    edges.iter().map(|&e| LatticeCube::new(vec![e]).expect("positive edge")).collect()
}

// ---------------------------------------------------------------------------
// 1: partition identities
// ---------------------------------------------------------------------------

/// 200 random partition configurations: the parity block cover tiles the box
/// to 1e-12 relative volume error, the recursive middle-removal partition's
/// outer volume matches the closed form to 1e-12 relative error, and blocks
/// of one parity class are separated by at least the smallest block edge.
pub fn criterion_01_partition_identities(_suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let configs = 200usize;
        let mut worst_tiling = 0.0f64;
        let mut worst_outer = 0.0f64;
        for i in 0..configs as u64 {
            let mut rng = stream(101, tag::PROBE, &[i]);
            let n = 1 + (next_u64(&mut rng) % 3) as usize;
            let a: Vec<f64> = (0..n).map(|_| 1.0 + 9.0 * next_f64(&mut rng)).collect();
            // Dyadic block edges (multiples of 2^-10): block boundaries are
            // then exact in floating point, keeping the separation identity
            // an exact comparison rather than a rounding knife-edge.
            let p: Vec<f64> = a
                .iter()
                .map(|&ak| {
                    let raw = ak * (0.05 + 0.45 * next_f64(&mut rng));
                    (raw * 1024.0).floor().max(1.0) / 1024.0
                })
                .collect();
            let delta = 0.05 + 0.45 * next_f64(&mut rng);
            let levels = 1 + (next_u64(&mut rng) % 3) as u32;

            let total: f64 = a.iter().product();
            let cover = block_cover(&a, &p)?;
            let tiling_err = (cover.total_volume() - total).abs() / total;
            worst_tiling = worst_tiling.max(tiling_err);
            if tiling_err >= 1e-12 {
                return Ok((false, format!("config {i}: tiling volume error {tiling_err:.3e} >= 1e-12")));
            }
            let min_p = p.iter().cloned().fold(f64::INFINITY, f64::min);
            let sep = cover.min_within_class_separation();
            if sep < min_p {
                return Ok((false, format!(
                    "config {i}: within-class separation {sep} < min block edge {min_p}"
                )));
            }

            let cantor = cantor_partition(&a, delta, levels)?;
            let closed_form = (1.0 - delta).powi((n as u32 * levels) as i32) * total;
            let outer_err = (cantor.outer_volume() - closed_form).abs() / closed_form;
            worst_outer = worst_outer.max(outer_err);
            if outer_err >= 1e-12 {
                return Ok((false, format!(
                    "config {i}: outer volume error {outer_err:.3e} >= 1e-12"
                )));
            }
            if cantor.outer.len() != 1usize << (n as u32 * levels) {
                return Ok((false, format!("config {i}: outer box count mismatch")));
            }
        }
        Ok((true, format!(
            "{configs} configs; worst tiling err {worst_tiling:.2e}, worst outer-volume err \
             {worst_outer:.2e} (tolerance 1e-12); separation >= min block edge everywhere"
        )))
    })();
    finish(1, "partition-identities", Some(5.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 2: covering validity
// ---------------------------------------------------------------------------

/// Unit-radius Lipschitz ball over a one-dimensional domain, resolutions
/// 0.5 and 0.25: 1000 random probes each land within the resolution of a
/// center, and `ln(#centers) · δ` varies by at most a factor 3 across the
/// sweep.
pub fn criterion_02_covering_validity(suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let probes_n = suite.scale(1000);
        let basis = fourier_basis(9);
        let ball = LipschitzBall::new(1.0)?;
        let mut products = Vec::new();
        let mut sizes = Vec::new();
        let mut max_nearest_all = 0.0f64;
        for (di, &delta) in [0.5f64, 0.25].iter().enumerate() {
            let covering = build_covering(&ball, delta, &basis, DEFAULT_CENTER_CAP)?;
            sizes.push(covering.len());
            let probes: Vec<FunctionalElement> = (0..probes_n as u64)
                .map(|i| {
                    let mut rng = stream(202, tag::PROBE, &[di as u64, i]);
                    Ok(ball.sample_piecewise_linear(&basis, &mut rng)?.0)
                })
                .collect::<Result<_>>()?;
            let audit = covering.audit(&probes)?;
            max_nearest_all = max_nearest_all.max(audit.max_nearest);
            if !audit.within_delta {
                return Ok((false, format!(
                    "delta {delta}: probe at distance {:.4} from nearest center (> delta)",
                    audit.max_nearest
                )));
            }
            products.push((covering.len() as f64).ln() * delta);
        }
        let ratio = (products[0] / products[1]).max(products[1] / products[0]);
        let pass = ratio <= 3.0;
        Ok((pass, format!(
            "{probes_n} probes covered at both resolutions (max nearest {max_nearest_all:.4}); \
             centers {{0.5: {}, 0.25: {}}}; ln(count)·δ ratio {ratio:.2} (tolerance 3)",
            sizes[0], sizes[1]
        )))
    })();
    finish(2, "covering-validity", Some(60.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 3: tail frequencies against the exact binomial oracle
// ---------------------------------------------------------------------------

/// Independent-sign tails on 100- and 400-site lines, thresholds aligned to
/// the sign lattice: the exact symmetric binomial tail must lie inside the
/// 95% Wilson interval in at least 95% of the grid cells at 10^4 replicates.
pub fn criterion_03_tail_binomial_oracle(suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let replicates = suite.scale(10_000).max(1000);
        let cubes = lines(&[100, 400]);
        // eps = m/50: thresholds are eps·V = 2m on 100 sites and 8m on 400,
        // both even integers, so no parity or rounding knife-edges.
        let eps_grid: Vec<f64> = (1..=12).map(|m| m as f64 / 50.0).collect();
        let report = empirical_tail(&TailRecipe::IidSigns, &eps_grid, &cubes, replicates, 303, None)?;
        let mut misses = 0usize;
        let mut total = 0usize;
        for cell in &report.cells {
            let v = cell.cube.sites;
            let t = (cell.eps * v).round() as u64;
            let exact = binomial_symmetric_tail(v as u64, t);
            total += 1;
            if exact < cell.wilson_lo || exact > cell.wilson_hi {
                misses += 1;
            }
        }
        let frac = 1.0 - misses as f64 / total as f64;
        let pass = frac >= 0.95;
        Ok((pass, format!(
            "{total} cells × {replicates} replicates: exact binomial tail inside the 95% Wilson \
             interval in {:.1}% (tolerance ≥ 95%, {misses} misses)",
            frac * 100.0
        )))
    })();
    finish(3, "tail-binomial-oracle", Some(60.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 4: covariance factorization inequality on exhaustive joints
// ---------------------------------------------------------------------------

/// 1000 random discrete joints (2–4 variables, exhaustively enumerated):
/// the covariance between the first block and the product of the rest is
/// bounded by (k−1)·α·Π‖Z_i‖∞ at tolerance 1e-12, for every split.
pub fn criterion_04_covariance_factorization(_suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let joints = 1000u64;
        let mut worst_gap = f64::NEG_INFINITY;
        for i in 0..joints {
            let mut rng = stream(404, tag::PROBE, &[i]);
            let k = 2 + (next_u64(&mut rng) % 3) as usize;
            let sizes: Vec<usize> = (0..k).map(|_| 2 + (next_u64(&mut rng) % 2) as usize).collect();
            let supports: Vec<Vec<f64>> = sizes
                .iter()
                .map(|&s| (0..s).map(|_| 2.0 * next_f64(&mut rng)).collect())
                .collect();
            let atoms: usize = sizes.iter().product();
            let mut probs: Vec<f64> = (0..atoms).map(|_| 1e-3 + next_f64(&mut rng)).collect();
            let mass: f64 = probs.iter().sum();
            for p in probs.iter_mut() {
                *p /= mass;
            }
            let joint = crate::concentration::DiscreteJoint::new(supports, probs)?;
            let splits: Vec<usize> = (1..k).collect();
            let report = crate::concentration::ibragimov_check(&joint, &splits)?;
            worst_gap = worst_gap.max(report.lhs - report.rhs);
            if !report.holds {
                return Ok((false, format!(
                    "joint {i} ({k} variables): lhs {:.6e} exceeds rhs {:.6e} + 1e-12",
                    report.lhs, report.rhs
                )));
            }
        }
        Ok((true, format!(
            "{joints} joints with 2–4 variables: inequality holds at tolerance 1e-12 \
             (worst lhs − rhs = {worst_gap:.3e})"
        )))
    })();
    finish(4, "covariance-factorization", Some(30.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 5: real-statistic tail dominance on a growing square ladder
// ---------------------------------------------------------------------------

const C5_EPS_GRID: [f64; 6] = [0.02, 0.035, 0.05, 0.07, 0.1, 0.14];

fn c5_config(suite: Suite) -> TailLadderConfig {
    TailLadderConfig {
        ladder: LadderSpec {
            cubes: squares(&[8, 16, 32]),
            c_prime: 1.0,
            replicates: suite.scale(2000).max(1000),
            seeds: vec![505],
        },
        recipe: TailRecipe::Field {
            generator: ma1_generator(4, 0),
            psi: PsiSpec::zero(),
            noise_scale: 0.0,
            statistic: TailStatistic::RealSum,
        },
        eps_grid: C5_EPS_GRID.to_vec(),
        bound: BoundSpec::Cor32 { a1: 1.0, a2: 1.0, b: 1.0 },
    }
}

/// Moving-average field on squares 8², 16², 32² at 2000 replicates per rung:
/// exponential-family constants fitted on the 8² rung must dominate the
/// upper Wilson limits on the held-out rungs wherever the empirical tail
/// exceeds 1e-3, and the pooled log-frequency/rate-value line must have
/// negative slope with R² > 0.9.
pub fn criterion_05_real_tail_dominance(suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let config = c5_config(suite);
        let outcome = run_tail_ladder(&config)?;
        // Decay diagnostic on the fit rung: one cube, so the log-frequency
        // against the rate value isolates the decay shape (pooling rungs
        // would mix three different fluctuation scales into one line).
        let fit_rung = crate::concentration::TailReport {
            cells: outcome.report.cells[..config.eps_grid.len()].to_vec(),
            ..outcome.report.clone()
        };
        let fit = slope_diagnostic(&fit_rung)?;
        let slope_ok = fit.slope < 0.0 && fit.r_squared > 0.9;
        let pass = outcome.verdict.pass && slope_ok;
        Ok((pass, format!(
            "dominance on {} held-out cells (p̂ > 1e-3): {} violations, max (Wilson hi)/bound \
             {:.3}; fit-rung decay slope {:.2} (< 0), R² {:.3} (> 0.9)",
            outcome.verdict.checked,
            outcome.verdict.violations,
            outcome.verdict.max_excess_ratio,
            fit.slope,
            fit.r_squared
        )))
    })();
    finish(5, "real-tail-dominance", Some(300.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 6: norm-statistic tail dominance + closed-form agreement
// ---------------------------------------------------------------------------

const C6_EPS_GRID: [f64; 6] = [0.03, 0.05, 0.07, 0.1, 0.14, 0.2];

/// The specialised tail form at shape parameter one must agree bitwise with
/// the general form, and the Hilbert-norm tail of the moving-average field
/// must be dominated on held-out rungs by constants fitted on the smallest
/// rung (same protocol as the real-statistic criterion).
pub fn criterion_06_norm_tail_dominance(suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        // Exact agreement of the specialised and general bound forms.
        for &sites in &[64.0, 1024.0, 1e6] {
            let cube = CubeSize::new(sites, 2)?;
            for &eps in &[0.05, 0.3, 1.0, 4.0] {
                let special =
                    bound_eval(&BoundSpec::Thm33Gamma1 { a1: 2.0, a2: 0.7, gamma: 1.0 }, eps, &cube)?;
                let general =
                    bound_eval(&BoundSpec::Thm33General { a1: 2.0, a2: 0.7, gamma: 1.0 }, eps, &cube)?;
                if special.to_bits() != general.to_bits() {
                    return Ok((false, format!(
                        "specialised form differs from general at eps {eps}, {sites} sites: \
                         {special:e} vs {general:e}"
                    )));
                }
            }
        }
        let config = TailLadderConfig {
            ladder: LadderSpec {
                cubes: squares(&[8, 16, 32]),
                c_prime: 1.0,
                replicates: suite.scale(2000).max(1000),
                seeds: vec![606],
            },
            recipe: TailRecipe::Field {
                generator: ma1_generator(4, 0),
                psi: PsiSpec::zero(),
                noise_scale: 0.0,
                statistic: TailStatistic::HilbertNormSum,
            },
            eps_grid: C6_EPS_GRID.to_vec(),
            bound: BoundSpec::Thm33Gamma1 { a1: 1.0, a2: 1.0, gamma: 1.0 },
        };
        let outcome = run_tail_ladder(&config)?;
        Ok((outcome.verdict.pass, format!(
            "specialised/general forms bitwise equal on a 12-point grid; dominance on {} held-out \
             cells (p̂ > 1e-3): {} violations, max (Wilson hi)/bound {:.3}",
            outcome.verdict.checked, outcome.verdict.violations, outcome.verdict.max_excess_ratio
        )))
    })();
    finish(6, "norm-tail-dominance", Some(300.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 7: log-Laplace dominance on admissible grids
// ---------------------------------------------------------------------------

/// Independent-sign fields on squares 16² and 32²: every β in the grid is
/// admissible for the computed region, the β = 0 estimate is exactly zero,
/// and the scale fitted on the 16² rung dominates the held-out estimates.
pub fn criterion_07_log_laplace_dominance(suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let config = LaplaceLadderConfig {
            ladder: LadderSpec {
                cubes: squares(&[16, 32]),
                c_prime: 1.0,
                replicates: suite.scale(2000),
                seeds: vec![707],
            },
            recipe: TailRecipe::IidSigns,
            beta_fractions: vec![0.25, 0.5, 1.0],
            b: 1.0,
            c1: 1.0,
        };
        let outcome = run_laplace_ladder(&config)?;
        for rep in &outcome.reports {
            let zero = rep
                .cells
                .iter()
                .find(|c| c.beta == 0.0)
                .ok_or_else(|| Error::InsufficientData("no zero cell in grid".into()))?;
            if zero.estimate != 0.0 {
                return Ok((false, format!(
                    "β = 0 estimate is {:.3e}, expected exactly 0",
                    zero.estimate
                )));
            }
        }
        Ok((outcome.verdict.pass, format!(
            "grid of {} admissible β values (fractions of the final rung's limit); β = 0 exact; \
             {} held-out cells: {} above the fitted bound, max estimate/bound {:.3}",
            outcome.beta_grid.len(),
            outcome.verdict.checked,
            outcome.verdict.violations,
            outcome.verdict.max_excess_ratio
        )))
    })();
    finish(7, "log-laplace-dominance", Some(120.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 8: estimator exactness against a direct-summation oracle
// ---------------------------------------------------------------------------

struct NaiveEval {
    f: f64,
    g: Vec<f64>,
    /// `None` when the denominator underflows.
    psi: Option<Vec<f64>>,
}

/// Literal direct-summation transcription of the estimator: sequential
/// loops, no pairwise summation, no shared code with the library path
/// beyond kernel/metric evaluation.
fn naive_estimator(
    config: &EstimatorConfig,
    sample: &fields::FieldSample,
    x: &FunctionalElement,
) -> Result<NaiveEval> {
    let h = config.bandwidth;
    let mut weights = Vec::with_capacity(sample.len());
    let mut in_ball = 0usize;
    for xs in &sample.x {
        let d = config.metric.distance(xs, x)?;
        weights.push(config.kernel.eval(d / h));
        if d <= h {
            in_ball += 1;
        }
    }
    let denom = match &config.small_ball {
        SmallBallPlan::PowerLaw { c, alpha } => {
            sample.len() as f64 * (c * h.powf(*alpha)).min(1.0)
        }
        SmallBallPlan::InSample => {
            if in_ball == 0 {
                return Err(Error::SmallBallUnavailable("empty in-sample ball".into()));
            }
            in_ball as f64
        }
        other => {
            return Err(Error::invalid(
                "small_ball",
                format!("oracle only covers power-law and in-sample plans, got {other:?}"),
            ))
        }
    };
    let mut wsum = 0.0f64;
    for &w in &weights {
        wsum += w;
    }
    let f = wsum / denom;
    let j_max = sample.spec.basis.j_max;
    let mut g = vec![0.0f64; j_max];
    for (w, y) in weights.iter().zip(&sample.y) {
        for (acc, c) in g.iter_mut().zip(&y.coeffs) {
            *acc += w * c;
        }
    }
    for acc in g.iter_mut() {
        *acc /= denom;
    }
    let psi = if f < config.min_denominator {
        None
    } else {
        Some(g.iter().map(|&v| v / f).collect())
    };
    Ok(NaiveEval { f, g, psi })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Part one: estimator outputs match the naive oracle to 1e-12 on 100
/// random tiny samples (at most 27 sites). Part two: the mean of the
/// denominator statistic over 2000 independent fields matches the
/// kernel/small-ball limit constant within three standard errors, using the
/// exact truncated-Gaussian scaling function.
pub fn criterion_08_estimator_exactness(suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let tol = 1e-12;
        let samples = match suite {
            Suite::Quick => 100u64,
            Suite::Smoke => 25,
        };
        let mut compared = 0usize;
        let mut underflow_agreements = 0usize;
        for i in 0..samples {
            let mut rng = stream(808, tag::PROBE, &[i]);
            let n = 1 + (next_u64(&mut rng) % 3) as usize;
            let edge = match n {
                1 => 2 + (next_u64(&mut rng) % 26) as u32,
                2 => 2 + (next_u64(&mut rng) % 4) as u32,
                _ => 2 + (next_u64(&mut rng) % 2) as u32,
            };
            let cube = LatticeCube::square(n, edge)?;
            let j_max = 2 + (next_u64(&mut rng) % 3) as usize;
            let q = (next_u64(&mut rng) % 2) as u32;
            let spec = GeneratorSpec::new(
                GeneratorKind::FunctionalMa { q },
                fourier_basis(j_max),
                CoeffDecay { d0: 0.5 + next_f64(&mut rng), d1: 0.3 + 0.9 * next_f64(&mut rng) },
                InnovationKind::TruncatedGaussian { cutoff: 2.5 },
                next_u64(&mut rng),
            )?;
            let psi = if next_u64(&mut rng) % 2 == 0 {
                PsiSpec::zero()
            } else {
                PsiSpec::linear_diag((0..j_max).map(|_| next_f64(&mut rng) - 0.5).collect())
            };
            let noise = 0.3 * next_f64(&mut rng);
            let sample = fields::generate(&spec, &psi, &cube, noise)?;
            let kernel = match next_u64(&mut rng) % 3 {
                0 => KernelSpec::quadratic(),
                1 => KernelSpec::triangle_zero(),
                _ => KernelSpec::indicator(),
            };
            let bandwidth = 0.3 + 1.2 * next_f64(&mut rng);
            let metric = if next_u64(&mut rng) % 2 == 0 {
                PseudoMetric::Full
            } else {
                PseudoMetric::Projection { j: 1 + (next_u64(&mut rng) % j_max as u64) as usize }
            };
            let plan = if next_u64(&mut rng) % 2 == 0 {
                SmallBallPlan::PowerLaw {
                    c: 0.2 + 0.8 * next_f64(&mut rng),
                    alpha: (next_u64(&mut rng) % 2) as f64,
                }
            } else {
                SmallBallPlan::InSample
            };
            let config = EstimatorConfig::new(kernel, bandwidth, metric, plan)?;
            let x = if next_u64(&mut rng) % 2 == 0 {
                FunctionalElement::zeros(j_max)
            } else {
                let mut marg_rng = stream(809, tag::MARGINAL, &[i]);
                crate::regression::sample_marginal(&spec, n, &mut marg_rng)
            };

            let naive = match naive_estimator(&config, &sample, &x) {
                Ok(v) => v,
                Err(Error::SmallBallUnavailable(_)) => {
                    // The library must refuse for the same reason.
                    match f_hat(&config, &sample, &x) {
                        Err(Error::SmallBallUnavailable(_)) => {
                            underflow_agreements += 1;
                            continue;
                        }
                        other => {
                            return Ok((false, format!(
                                "sample {i}: oracle found an empty ball but the library \
                                 returned {other:?}"
                            )))
                        }
                    }
                }
                Err(e) => return Err(e),
            };
            let f_lib = f_hat(&config, &sample, &x)?;
            if !close(f_lib, naive.f, tol) {
                return Ok((false, format!(
                    "sample {i}: denominator statistic {f_lib:.17e} vs oracle {:.17e}",
                    naive.f
                )));
            }
            let g_lib = g_hat(&config, &sample, &x)?;
            for (j, (&a, &b)) in g_lib.coeffs.iter().zip(&naive.g).enumerate() {
                if !close(a, b, tol) {
                    return Ok((false, format!(
                        "sample {i}: numerator coefficient {j}: {a:.17e} vs oracle {b:.17e}"
                    )));
                }
            }
            match (psi_hat(&config, &sample, &x), naive.psi) {
                (Ok(p_lib), Some(p_naive)) => {
                    for (j, (&a, &b)) in p_lib.coeffs.iter().zip(&p_naive).enumerate() {
                        if !close(a, b, tol) {
                            return Ok((false, format!(
                                "sample {i}: estimate coefficient {j}: {a:.17e} vs oracle {b:.17e}"
                            )));
                        }
                    }
                }
                (Err(Error::DenominatorUnderflow { .. }), None) => underflow_agreements += 1,
                (lib, naive) => {
                    return Ok((false, format!(
                        "sample {i}: underflow disagreement (library {:?}, oracle defined: {})",
                        lib.map(|_| "defined"),
                        naive.is_some()
                    )))
                }
            }
            compared += 1;
        }

        // Mean of the denominator statistic against the exact limit constant.
        let reps = suite.scale(2000);
        let spec = GeneratorSpec::new(
            GeneratorKind::FunctionalMa { q: 0 },
            fourier_basis(2),
            CoeffDecay { d0: 1.0, d1: 0.0 },
            InnovationKind::TruncatedGaussian { cutoff: 3.0 },
            0,
        )?;
        let cutoff = 3.0;
        let phi = |t: f64| numeric::standard_normal_cdf(t);
        let f_exact = |h: f64| (2.0 * phi(h.min(cutoff)) - 1.0) / (2.0 * phi(cutoff) - 1.0);
        let h = 0.35;
        let target = m_x(&KernelSpec::quadratic(), |u| f_exact(h * u) / f_exact(h))?;
        let config = EstimatorConfig::new(
            KernelSpec::quadratic(),
            h,
            PseudoMetric::Projection { j: 1 },
            SmallBallPlan::TruncGaussAbs { scale: 1.0, cutoff },
        )?;
        let cube = LatticeCube::new(vec![40])?;
        let x0 = FunctionalElement::zeros(2);
        let vals: Vec<f64> = (0..reps as u64)
            .map(|r| {
                let mut s = spec.clone();
                s.seed = 7_000_000 + r;
                let sample = fields::generate(&s, &PsiSpec::zero(), &cube, 0.0)?;
                f_hat(&config, &sample, &x0)
            })
            .collect::<Result<_>>()?;
        let mean = numeric::mean(&vals);
        let var = numeric::mean(&vals.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>());
        let se = (var / reps as f64).sqrt();
        let z = (mean - target).abs() / se;
        let pass = z < 3.0;
        Ok((pass, format!(
            "{samples} tiny samples checked against the direct-summation oracle at 1e-12 \
             ({compared} value comparisons, {underflow_agreements} agreed refusals); mean \
             denominator statistic {mean:.4} vs limit constant {target:.4} at {z:.2} \
             standard errors (tolerance 3)"
        )))
    })();
    finish(8, "estimator-exactness", None, started, outcome)
}

// ---------------------------------------------------------------------------
// 9: rate-ladder monotonicity in both dependence regimes
// ---------------------------------------------------------------------------

fn c9_config(suite: Suite) -> RateLadderConfig {
    let seeds: Vec<u64> = match suite {
        Suite::Quick => (0..20).map(|i| 9000 + i).collect(),
        Suite::Smoke => (0..8).map(|i| 9000 + i).collect(),
    };
    // Variance-dominated regime: the response is mostly observation noise,
    // so the sup error tracks 1/sqrt(|ball count|) and the rung-to-rung
    // drop (~30%) decisively exceeds the batch-median fluctuation. The
    // radius is large relative to the covering resolutions so the covering
    // grows smoothly across rungs (a one-center first rung would understate
    // the sup and break monotonicity).
    // Zero regression function: the sup error is then pure estimation
    // noise, decaying with the in-ball sample count, and the verdict
    // isolates that decay. With a sloped target the hardest covering
    // center sits at the ball's edge, whose exact position jitters with
    // the covering resolution from rung to rung, folding a resolution
    // artifact into the sup. Flat coefficient scales spread the noise over
    // six coordinates, so the error norm concentrates (relative spread
    // ~1/sqrt(12)) and the rung-to-rung decay dwarfs seed fluctuation;
    // the bandwidth is wide relative to the marginal spread so every
    // center keeps a comparable ball count.
    let generator = GeneratorSpec::new(
        GeneratorKind::FunctionalMa { q: 1 },
        fourier_basis(6),
        CoeffDecay { d0: 0.36, d1: 0.0 },
        InnovationKind::TruncatedGaussian { cutoff: 2.5 },
        0,
    )
    .expect("moving-average generator spec is valid");
    RateLadderConfig {
        ladder: LadderSpec { cubes: lines(&[64, 128, 256]), c_prime: 1.0, replicates: 1, seeds },
        generator,
        psi: PsiSpec::zero(),
        noise_scale: 0.6,
        kernel: KernelSpec::quadratic(),
        metric: PseudoMetric::Projection { j: 1 },
        radius: RadiusSchedule::Constant { value: 0.75 },
        bandwidth: BandwidthSchedule::InverseLogVolume { coeff: 5.0 },
        small_ball_model: PowerLawModel { c: 0.5, alpha: 1.0 },
        covering_cap: DEFAULT_CENTER_CAP,
    }
}

// Batch width is the same in both suites so the monotonicity check has the
// same granularity; the smoke suite just runs fewer batches.
fn c9_batch_size(_suite: Suite) -> usize {
    4
}

fn batch_monotone_fraction(per_seed_by_rung: &[Vec<Option<f64>>], batch: usize) -> (usize, usize) {
    let seeds = per_seed_by_rung[0].len();
    let mut batches = 0usize;
    let mut monotone = 0usize;
    let mut start = 0usize;
    while start + batch <= seeds {
        let medians: Vec<Option<f64>> = per_seed_by_rung
            .iter()
            .map(|rung| {
                let mut vals: Vec<f64> =
                    rung[start..start + batch].iter().filter_map(|v| *v).collect();
                if vals.len() < batch {
                    return None;
                }
                vals.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
                let n = vals.len();
                Some(if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    0.5 * (vals[n / 2 - 1] + vals[n / 2])
                })
            })
            .collect();
        batches += 1;
        if medians.iter().all(|m| m.is_some())
            && medians.windows(2).all(|w| w[1].unwrap() < w[0].unwrap())
        {
            monotone += 1;
        }
        start += batch;
    }
    (monotone, batches)
}

/// One-dimensional ladder 64/128/256 at 20 seeds per rung, both dependence
/// regimes: per disjoint batch of 4 seeds, the batch median sup error must
/// be strictly decreasing across rungs in at least 80% of batches; and the
/// two ratio conditions of the strong-mixing schedule must decrease along
/// the declared schedules in the asymptotic regime.
pub fn criterion_09_rate_ladder_monotonicity(suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let config = c9_config(suite);
        let batch = c9_batch_size(suite);
        let mut mode_summaries = Vec::new();
        let mut all_pass = true;
        for mode in [MixingMode::Alpha, MixingMode::Weak] {
            let report = run_rate_ladder(&config, mode)?;
            let per_seed_by_rung: Vec<Vec<Option<f64>>> =
                report.rungs.iter().map(|r| r.per_seed.clone()).collect();
            let (monotone, batches) = batch_monotone_fraction(&per_seed_by_rung, batch);
            let frac = monotone as f64 / batches as f64;
            if frac < 0.8 {
                all_pass = false;
            }
            let medians: Vec<String> = report
                .rungs
                .iter()
                .map(|r| r.median.map_or("underflow".into(), |m| format!("{m:.4}")))
                .collect();
            mode_summaries.push(format!(
                "{mode:?}: {monotone}/{batches} batches strictly decreasing (medians {})",
                medians.join(" > ")
            ));
        }
        // Ratio conditions of the strong-mixing schedule, evaluated in the
        // asymptotic regime (ln sites 250, 270, 290) where the limit
        // statement lives; desk-scale cubes sit below the crossover of the
        // polylog factors.
        let big: Vec<CubeSize> = [250.0f64, 270.0, 290.0]
            .iter()
            .map(|&lnv| CubeSize::new(lnv.exp(), 1).expect("valid abstract cube"))
            .collect();
        let schedules = schedule_report(&config, MixingMode::Alpha, &big);
        let mut ratios_ok = true;
        for i in 0..2 {
            let vals: Vec<f64> = schedules.iter().map(|s| s.ratios[i]).collect();
            if !(vals[0] > vals[1] && vals[1] > vals[2]) {
                ratios_ok = false;
            }
        }
        if !ratios_ok {
            all_pass = false;
        }
        Ok((all_pass, format!(
            "{} (tolerance ≥ 80% of disjoint {batch}-seed batches); both strong-mixing ratio \
             conditions decreasing along the declared schedules: {ratios_ok}",
            mode_summaries.join("; ")
        )))
    })();
    finish(9, "rate-ladder-monotonicity", Some(600.0), started, outcome)
}

// ---------------------------------------------------------------------------
// 10: determinism across thread counts
// ---------------------------------------------------------------------------

/// A tail ladder and a rate ladder rendered to CSV twice, once inside a
/// 1-thread pool and once inside an 8-thread pool: the artifacts must be
/// byte-identical.
pub fn criterion_10_determinism(_suite: Suite) -> CriterionResult {
    let started = Instant::now();
    let outcome = (|| {
        let tail_config = TailLadderConfig {
            ladder: LadderSpec {
                cubes: squares(&[8, 16]),
                c_prime: 1.0,
                replicates: 1000,
                seeds: vec![1010],
            },
            recipe: TailRecipe::Field {
                generator: ma1_generator(3, 0),
                psi: PsiSpec::zero(),
                noise_scale: 0.0,
                statistic: TailStatistic::RealSum,
            },
            eps_grid: vec![0.03, 0.06, 0.1],
            bound: BoundSpec::Cor32 { a1: 1.0, a2: 1.0, b: 1.0 },
        };
        let rate_config = RateLadderConfig {
            ladder: LadderSpec {
                cubes: lines(&[64, 128]),
                c_prime: 1.0,
                replicates: 1,
                seeds: vec![1, 2, 3],
            },
            ..c9_config(Suite::Smoke)
        };
        let run_both = |threads: usize| -> Result<(String, String)> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::ResourceCap(format!("cannot build {threads}-thread pool: {e}")))?;
            pool.install(|| {
                let tail = run_tail_ladder(&tail_config)?;
                let rate = run_rate_ladder(&rate_config, MixingMode::Alpha)?;
                let meta = ReportMeta::new("determinism-check", 1010);
                Ok((tail_csv(&tail.report, &meta), rate_csv(&rate, &meta)))
            })
        };
        let (tail_1, rate_1) = run_both(1)?;
        let (tail_8, rate_8) = run_both(8)?;
        let (tail_1b, rate_1b) = run_both(1)?;
        let repeat_ok = tail_1 == tail_1b && rate_1 == rate_1b;
        let threads_ok = tail_1 == tail_8 && rate_1 == rate_8;
        let pass = repeat_ok && threads_ok;
        Ok((pass, format!(
            "tail CSV {} bytes, rate CSV {} bytes; repeat-run byte-identical: {repeat_ok}; \
             1-thread vs 8-thread byte-identical: {threads_ok}",
            tail_1.len(),
            rate_1.len()
        )))
    })();
    finish(10, "determinism", None, started, outcome)
}

// ---------------------------------------------------------------------------
// Seed-stream helpers (uniform draws from the counter-based streams)
// ---------------------------------------------------------------------------

fn next_u64(rng: &mut impl rand::RngCore) -> u64 {
    rng.next_u64()
}

fn next_f64(rng: &mut impl rand::RngCore) -> f64 {
    // 53-bit uniform in [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

//! Finite coverings of the Lipschitz ball `G(R)` at radius `δ` in the `H`
//! norm.
//!
//! Centers are quantized grid functions: the domain is cut into cells, each
//! cell carries a constant value on a quantum grid `q·Z`, and values of
//! adjacent cells may differ by at most a fixed number of quanta (a function
//! with `Lip ≤ R` cannot jump faster than `R` times the cell pitch). Every
//! admissible assignment is enumerated and projected onto the basis.
//!
//! Correctness: for `f ∈ G(R)` let `g` be the center whose cell values are
//! `f` at the cell midpoints rounded to the quantum grid. Then
//! `sup |f - g| ≤ R·diag/2 + q/2` where `diag` is the cell diagonal, and
//! `‖f - g‖_H ≤ √ν(D) · sup|f - g|`. The construction picks `diag` and `q`
//! so this is at most `0.95·δ`, and `g` is always one of the enumerated
//! centers. Enumeration is sequential and lexicographic, so center order is
//! deterministic and independent of thread count.

use serde::{Deserialize, Serialize};

use super::{BasisSpec, FunctionalElement, LipschitzBall};
use crate::numeric::gauss_legendre_on;
use crate::{Error, Result};

/// Default cap on the number of materialized centers.
pub const DEFAULT_CENTER_CAP: usize = 1_000_000;

/// Fraction of `δ` budgeted for the construction error; the rest is slack
/// consumed by basis projection and floating-point noise.
const MARGIN: f64 = 0.95;

/// Geometry of a covering: cells, value quantum and adjacency steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringParams {
    /// Cells per axis.
    pub cells: Vec<usize>,
    /// Cell edge per axis.
    pub cell_edges: Vec<f64>,
    /// Value quantum `q`; cell values are `level · q`.
    pub quantum: f64,
    /// Levels range over `-level_cap ..= level_cap`.
    pub level_cap: i64,
    /// Maximum level difference between adjacent cells, per axis.
    pub max_step: Vec<i64>,
}

/// A `δ`-covering of `G(R)` in the `H` norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covering {
    pub radius: f64,
    pub delta: f64,
    pub centers: Vec<FunctionalElement>,
    pub params: CoveringParams,
    /// A-priori combinatorial upper bound on `ln(#centers)`.
    pub claimed_log_bound: f64,
}

/// Result of checking probes against a covering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringAudit {
    pub probes: usize,
    /// Largest probe-to-nearest-center distance observed.
    pub max_nearest: f64,
    pub within_delta: bool,
}

struct Geometry {
    cells: Vec<usize>,
    cell_edges: Vec<f64>,
    quantum: f64,
    level_cap: i64,
    max_step: Vec<i64>,
    ncells: usize,
    product_log: f64,
}

fn geometry(ball: &LipschitzBall, delta: f64, basis: &BasisSpec) -> Result<Geometry> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid("delta", format!("need delta > 0, got {delta}")));
    }
    let r = ball.radius;
    let d = basis.domain_dim();
    let sqrt_nu = basis.nu_total().sqrt();
    // Budget split: R·diag/2 ≤ 0.6·b and q/2 ≤ 0.4·b with b = MARGIN·δ/√ν.
    let budget = MARGIN * delta / sqrt_nu;
    let quantum = 0.8 * budget;
    let mut cells = Vec::with_capacity(d);
    let mut cell_edges = Vec::with_capacity(d);
    for k in 0..d {
        let side = basis.domain[k][1] - basis.domain[k][0];
        let target = if r > 0.0 {
            1.2 * budget / (r * (d as f64).sqrt())
        } else {
            side
        };
        let n = (side / target).ceil().max(1.0) as usize;
        cells.push(n);
        cell_edges.push(side / n as f64);
    }
    let level_cap = if r > 0.0 { (r / quantum + 0.5 + 1e-9).floor() as i64 } else { 0 };
    let max_step: Vec<i64> = cell_edges
        .iter()
        .map(|&e| ((r * e) / quantum + 1.0 + 1e-9).floor() as i64)
        .collect();
    let ncells: usize = cells.iter().product();
    let widest = max_step.iter().max().copied().unwrap_or(0);
    let product_log = ((2 * level_cap + 1) as f64).ln()
        + (ncells.saturating_sub(1)) as f64 * ((2 * widest + 1) as f64).ln();
    Ok(Geometry { cells, cell_edges, quantum, level_cap, max_step, ncells, product_log })
}

/// Exact center count for one-dimensional geometries by dynamic programming
/// over (cell, level). Returns `ln(count)`.
fn dp_log_count_1d(geo: &Geometry) -> f64 {
    let nlevels = (2 * geo.level_cap + 1) as usize;
    let step = geo.max_step[0] as usize;
    let mut counts = vec![1.0f64; nlevels];
    // Rescale periodically so the DP never overflows; track ln of the scale.
    let mut ln_scale = 0.0;
    for _ in 1..geo.cells[0] {
        let mut prefix = vec![0.0f64; nlevels + 1];
        for l in 0..nlevels {
            prefix[l + 1] = prefix[l] + counts[l];
        }
        let mut next = vec![0.0f64; nlevels];
        for (l, slot) in next.iter_mut().enumerate() {
            let lo = l.saturating_sub(step);
            let hi = (l + step + 1).min(nlevels);
            *slot = prefix[hi] - prefix[lo];
        }
        counts = next;
        let total: f64 = counts.iter().sum();
        if total > 1e250 {
            let inv = 1.0 / total;
            for c in counts.iter_mut() {
                *c *= inv;
            }
            ln_scale += total.ln();
        }
    }
    ln_scale + counts.iter().sum::<f64>().ln()
}

/// `ln(#centers)` for the covering that [`build_covering`] would construct,
/// without materializing it. Exact for one-dimensional domains (dynamic
/// programming); an upper bound otherwise. Returns `(ln_count, exact)`.
pub fn covering_log_count(
    ball: &LipschitzBall,
    delta: f64,
    basis: &BasisSpec,
) -> Result<(f64, bool)> {
    let geo = geometry(ball, delta, basis)?;
    if ball.radius == 0.0 {
        return Ok((0.0, true));
    }
    if basis.domain_dim() == 1 {
        Ok((dp_log_count_1d(&geo), true))
    } else {
        Ok((geo.product_log, false))
    }
}

/// Builds the covering, materializing at most `cap` centers; a larger
/// enumeration is refused with the size estimate attached.
pub fn build_covering(
    ball: &LipschitzBall,
    delta: f64,
    basis: &BasisSpec,
    cap: usize,
) -> Result<Covering> {
    let geo = geometry(ball, delta, basis)?;
    let params = CoveringParams {
        cells: geo.cells.clone(),
        cell_edges: geo.cell_edges.clone(),
        quantum: geo.quantum,
        level_cap: geo.level_cap,
        max_step: geo.max_step.clone(),
    };
    if ball.radius == 0.0 {
        return Ok(Covering {
            radius: 0.0,
            delta,
            centers: vec![FunctionalElement::zeros(basis.j_max)],
            params,
            claimed_log_bound: 0.0,
        });
    }
    // Cheap refusal when even the crude product bound is hopeless.
    if geo.product_log > (cap as f64).ln() {
        let better = if basis.domain_dim() == 1 { dp_log_count_1d(&geo) } else { geo.product_log };
        if better > (cap as f64).ln() {
            return Err(Error::CoveringTooLarge { estimate: better.exp(), cap });
        }
    }

    let d = basis.domain_dim();
    // Row-major strides over cells.
    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * geo.cells[k + 1];
    }
    // Enumerate admissible level assignments depth-first in cell order.
    let mut assignments: Vec<Vec<i64>> = Vec::new();
    let mut current = vec![0i64; geo.ncells];
    let mut stack: Vec<(usize, i64)> = Vec::new(); // (cell, next level to try)
    let range_for = |current: &[i64], c: usize| -> (i64, i64) {
        let mut lo = -geo.level_cap;
        let mut hi = geo.level_cap;
        let mut rem = c;
        for k in 0..d {
            let coord = rem / strides[k];
            rem %= strides[k];
            if coord > 0 {
                let nb = current[c - strides[k]];
                lo = lo.max(nb - geo.max_step[k]);
                hi = hi.min(nb + geo.max_step[k]);
            }
        }
        (lo, hi)
    };
    let (lo0, _) = range_for(&current, 0);
    stack.push((0, lo0));
    while let Some((c, lvl)) = stack.pop() {
        let (_, hi) = range_for(&current, c);
        if lvl > hi {
            continue;
        }
        current[c] = lvl;
        stack.push((c, lvl + 1));
        if c + 1 == geo.ncells {
            assignments.push(current.clone());
            if assignments.len() > cap {
                return Err(Error::CoveringTooLarge {
                    estimate: geo.product_log.exp(),
                    cap,
                });
            }
        } else {
            let (nlo, _) = range_for(&current, c + 1);
            stack.push((c + 1, nlo));
        }
    }

    // Per-cell basis integrals: P[c][j] = ∫_cell e_j dν, separable per axis.
    let weight = match basis.measure {
        super::MeasureKind::Lebesgue => 1.0,
        super::MeasureKind::NormalizedLebesgue => 1.0 / basis.domain_volume(),
    };
    // axis_int[k][cell][order-1]
    let max_order = (1..=basis.j_max)
        .map(|j| basis.multi_indices[j - 1].iter().copied().max().unwrap_or(1))
        .max()
        .unwrap_or(1);
    let mut axis_int: Vec<Vec<Vec<f64>>> = Vec::with_capacity(d);
    for k in 0..d {
        let [lo, hi] = basis.domain[k];
        let mut per_cell = Vec::with_capacity(geo.cells[k]);
        for c in 0..geo.cells[k] {
            let a = lo + geo.cell_edges[k] * c as f64;
            let b = (a + geo.cell_edges[k]).min(hi);
            let (xs, ws) = gauss_legendre_on(16, a, b);
            let mut per_order = Vec::with_capacity(max_order);
            for ord in 1..=max_order {
                let v: f64 = xs
                    .iter()
                    .zip(&ws)
                    .map(|(x, w)| {
                        let t = (x - lo) / (hi - lo);
                        w * basis.axis_scale(k) * basis.eval_unit(ord, t)
                    })
                    .sum();
                per_order.push(v);
            }
            per_cell.push(per_order);
        }
        axis_int.push(per_cell);
    }
    // cell_proj[c][j] = ∫_cell e_j dν.
    let mut cell_proj = vec![vec![0.0; basis.j_max]; geo.ncells];
    for (c, row) in cell_proj.iter_mut().enumerate() {
        let mut rem = c;
        let mut coords = vec![0usize; d];
        for k in 0..d {
            coords[k] = rem / strides[k];
            rem %= strides[k];
        }
        for (j, slot) in row.iter_mut().enumerate() {
            let mut v = weight;
            for k in 0..d {
                let ord = basis.multi_indices[j][k];
                v *= axis_int[k][coords[k]][ord - 1];
            }
            *slot = v;
        }
    }

    let centers: Vec<FunctionalElement> = assignments
        .iter()
        .map(|levels| {
            let mut coeffs = vec![0.0; basis.j_max];
            for (c, &lvl) in levels.iter().enumerate() {
                if lvl != 0 {
                    let v = lvl as f64 * geo.quantum;
                    for (j, co) in coeffs.iter_mut().enumerate() {
                        *co += v * cell_proj[c][j];
                    }
                }
            }
            FunctionalElement::new(coeffs)
        })
        .collect();

    Ok(Covering {
        radius: ball.radius,
        delta,
        centers,
        params,
        claimed_log_bound: geo.product_log,
    })
}

impl Covering {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Distance from `x` to the nearest center.
    pub fn nearest_distance(&self, x: &FunctionalElement) -> Result<f64> {
        let mut best = f64::INFINITY;
        for c in &self.centers {
            if c.len() != x.len() {
                return Err(Error::DimensionMismatch(
                    "probe and covering centers use different bases".into(),
                ));
            }
            let mut acc = 0.0;
            for (a, b) in x.coeffs.iter().zip(&c.coeffs) {
                acc += (a - b) * (a - b);
            }
            best = best.min(acc);
        }
        Ok(best.sqrt())
    }

    /// Checks that every probe lies within `delta` of some center.
    pub fn audit(&self, probes: &[FunctionalElement]) -> Result<CoveringAudit> {
        use rayon::prelude::*;
        let dists: Vec<f64> = probes
            .par_iter()
            .map(|p| self.nearest_distance(p))
            .collect::<Result<_>>()?;
        let max_nearest = dists.iter().cloned().fold(0.0, f64::max);
        Ok(CoveringAudit {
            probes: probes.len(),
            max_nearest,
            within_delta: max_nearest < self.delta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{BasisFamily, MeasureKind};
    use rand::SeedableRng;

    fn fourier_basis(j_max: usize) -> BasisSpec {
        BasisSpec::new(BasisFamily::Fourier, vec![[0.0, 1.0]], MeasureKind::Lebesgue, j_max)
            .unwrap()
    }

    #[test]
    fn zero_radius_ball_is_covered_by_one_center() {
        let basis = fourier_basis(5);
        let ball = LipschitzBall::new(0.0).unwrap();
        let cov = build_covering(&ball, 0.1, &basis, DEFAULT_CENTER_CAP).unwrap();
        assert_eq!(cov.len(), 1);
        assert!(cov.centers[0].coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn unit_ball_covering_audit_at_half() {
        let basis = fourier_basis(9);
        let ball = LipschitzBall::new(1.0).unwrap();
        let cov = build_covering(&ball, 0.5, &basis, DEFAULT_CENTER_CAP).unwrap();
        assert!(cov.len() > 1);
        assert!((cov.len() as f64).ln() <= cov.claimed_log_bound + 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let probes: Vec<FunctionalElement> = (0..200)
            .map(|_| ball.sample_piecewise_linear(&basis, &mut rng).unwrap().0)
            .collect();
        let audit = cov.audit(&probes).unwrap();
        assert!(audit.within_delta, "max nearest distance {}", audit.max_nearest);
    }

    #[test]
    fn covering_cap_is_enforced_with_an_estimate() {
        let basis = fourier_basis(5);
        let ball = LipschitzBall::new(1.0).unwrap();
        match build_covering(&ball, 0.02, &basis, 10_000) {
            Err(Error::CoveringTooLarge { estimate, cap }) => {
                assert!(estimate > 1e4);
                assert_eq!(cap, 10_000);
            }
            other => panic!("expected CoveringTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn dp_count_matches_enumeration_in_one_dimension() {
        let basis = fourier_basis(5);
        let ball = LipschitzBall::new(1.0).unwrap();
        for delta in [0.5, 0.4, 0.25] {
            let cov = build_covering(&ball, delta, &basis, DEFAULT_CENTER_CAP).unwrap();
            let (ln_count, exact) = covering_log_count(&ball, delta, &basis).unwrap();
            assert!(exact);
            let dp = ln_count.exp().round() as usize;
            assert_eq!(dp, cov.len(), "delta = {delta}");
        }
    }

    #[test]
    fn log_count_scales_like_inverse_delta() {
        // For d = 1 the covering exponent is ~ 1/δ: ln(N)·δ stays within a
        // constant factor along a dyadic sweep.
        let basis = fourier_basis(5);
        let ball = LipschitzBall::new(1.0).unwrap();
        let mut products = Vec::new();
        for delta in [0.4, 0.2, 0.1] {
            let (ln_count, exact) = covering_log_count(&ball, delta, &basis).unwrap();
            assert!(exact);
            products.push(ln_count * delta);
            // Shape of the covering-number bound: ln N ≤ C·λ(D¹)·(√ν R/δ + 1)^d.
            let ceiling = 4.0 * basis.fattened_volume()
                * (basis.nu_total().sqrt() * ball.radius / delta + 1.0);
            assert!(ln_count <= ceiling, "delta {delta}: {ln_count} > {ceiling}");
        }
        let max = products.iter().cloned().fold(f64::MIN, f64::max);
        let min = products.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 3.0, "products {products:?}");
    }

    #[test]
    fn two_dimensional_covering_small_case() {
        let basis = BasisSpec::new(
            BasisFamily::Fourier,
            vec![[0.0, 1.0], [0.0, 1.0]],
            MeasureKind::Lebesgue,
            6,
        )
        .unwrap();
        let ball = LipschitzBall::new(0.5).unwrap();
        let cov = build_covering(&ball, 0.4, &basis, DEFAULT_CENTER_CAP).unwrap();
        assert!(!cov.is_empty());
        assert!((cov.len() as f64).ln() <= cov.claimed_log_bound + 1e-12);
    }
}

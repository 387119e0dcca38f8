//! Truncated orthonormal bases of `H = L²(D, ν)` and coefficient-space
//! elements.
//!
//! A [`BasisSpec`] fixes a box domain `D ⊂ R^d`, a measure `ν` (Lebesgue or
//! normalized Lebesgue) and the first `j_max` members of a tensorized
//! orthonormal family (Fourier or Legendre). A [`FunctionalElement`] is the
//! coefficient vector of a function in the span; inner products, norms and
//! distances are Euclidean on coefficients (Parseval).
//!
//! Beyond the Hilbert norm the module provides:
//!
//! * the `C⁰`-type norm `‖x‖ = sup_u |x(u)| + sup_{u≠v} |x(u)-x(v)| / ‖u-v‖`
//!   (grid-approximated) and the associated Lipschitz ball `G(R)`;
//! * projection pseudo-metrics `d_J(x, y) = (Σ_{j≤J} (x_j-y_j)²)^{1/2}`;
//! * finite coverings of `G(R)` at radius `δ` in the `H` norm, built from
//!   quantized grid functions (see [`covering`]).

mod covering;

pub use covering::{
    build_covering, covering_log_count, Covering, CoveringAudit, CoveringParams,
    DEFAULT_CENTER_CAP,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::gauss_legendre_on;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    /// `1, √2 cos(2πmt), √2 sin(2πmt)` on each axis (affinely mapped).
    Fourier,
    /// `√(2k-1) · P_{k-1}(2t-1)` on each axis.
    Legendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    /// `dν = du` on `D`; `ν(D) = vol(D)`.
    Lebesgue,
    /// `dν = du / vol(D)`; `ν(D) = 1`.
    NormalizedLebesgue,
}

/// A concrete truncated basis of `L²(D, ν)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    /// Box domain, per-axis `[lo, hi]`.
    pub domain: Vec<[f64; 2]>,
    pub measure: MeasureKind,
    pub j_max: usize,
    /// Per linear index `j`, the per-axis orders (1-based). Derived from
    /// `(domain dim, j_max)`; kept for cheap evaluation.
    #[serde(skip)]
    multi_indices: Vec<Vec<usize>>,
}

/// Orthonormality tolerance enforced at construction.
pub const GRAM_TOL: f64 = 1e-10;

impl BasisSpec {
    /// Builds the basis and verifies `∫ e_i e_j dν = δ_ij` by tensor
    /// Gauss–Legendre quadrature to [`GRAM_TOL`].
    pub fn new(
        family: BasisFamily,
        domain: Vec<[f64; 2]>,
        measure: MeasureKind,
        j_max: usize,
    ) -> Result<Self> {
        if domain.is_empty() {
            return Err(Error::invalid("domain", "at least one axis required"));
        }
        if domain.len() > 3 {
            return Err(Error::invalid("domain", "at most 3 axes supported"));
        }
        for (k, b) in domain.iter().enumerate() {
            if !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite() {
                return Err(Error::invalid(
                    "domain",
                    format!("axis {k} must be a finite interval [lo, hi) with lo < hi, got {b:?}"),
                ));
            }
        }
        if j_max == 0 || j_max > 64 {
            return Err(Error::invalid("j_max", format!("need 1 <= j_max <= 64, got {j_max}")));
        }
        let multi_indices = enumerate_multi_indices(domain.len(), j_max);
        let basis = BasisSpec { family, domain, measure, j_max, multi_indices };
        basis.check_orthonormal()?;
        Ok(basis)
    }

    /// Restores derived tables after deserialization.
    pub fn rebuild(mut self) -> Result<Self> {
        self.multi_indices = enumerate_multi_indices(self.domain.len(), self.j_max);
        self.check_orthonormal()?;
        Ok(self)
    }

    pub fn domain_dim(&self) -> usize {
        self.domain.len()
    }

    pub fn domain_volume(&self) -> f64 {
        self.domain.iter().map(|b| b[1] - b[0]).product()
    }

    /// Total mass `ν(D)`.
    pub fn nu_total(&self) -> f64 {
        match self.measure {
            MeasureKind::Lebesgue => self.domain_volume(),
            MeasureKind::NormalizedLebesgue => 1.0,
        }
    }

    /// Lebesgue volume of the `ℓ∞` 1-fattening `D¹ = {u : dist_∞(u, D) ≤ 1}`.
    pub fn fattened_volume(&self) -> f64 {
        self.domain.iter().map(|b| b[1] - b[0] + 2.0).product()
    }

    /// Density of `ν` with respect to Lebesgue measure.
    fn weight(&self) -> f64 {
        match self.measure {
            MeasureKind::Lebesgue => 1.0,
            MeasureKind::NormalizedLebesgue => 1.0 / self.domain_volume(),
        }
    }

    /// Scale factor making the affinely mapped unit-interval family
    /// orthonormal under `ν` (per axis).
    fn axis_scale(&self, axis: usize) -> f64 {
        let len = self.domain[axis][1] - self.domain[axis][0];
        match self.measure {
            MeasureKind::Lebesgue => 1.0 / len.sqrt(),
            // dν = du / vol: the per-axis normalizations cancel.
            MeasureKind::NormalizedLebesgue => 1.0,
        }
    }

    /// Unit-interval family member `k ≥ 1` at `t ∈ [0, 1]`.
    fn eval_unit(&self, order: usize, t: f64) -> f64 {
        debug_assert!(order >= 1);
        match self.family {
            BasisFamily::Fourier => {
                if order == 1 {
                    1.0
                } else {
                    let m = (order / 2) as f64;
                    let phase = 2.0 * std::f64::consts::PI * m * t;
                    if order % 2 == 0 {
                        std::f64::consts::SQRT_2 * phase.cos()
                    } else {
                        std::f64::consts::SQRT_2 * phase.sin()
                    }
                }
            }
            BasisFamily::Legendre => {
                let x = 2.0 * t - 1.0;
                let mut p0 = 1.0;
                let mut p1 = x;
                if order == 1 {
                    return 1.0;
                }
                for k in 2..order {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                ((2 * order - 1) as f64).sqrt() * p1
            }
        }
    }

    /// Basis function `e_j` (0-based `j`) at a domain point.
    pub fn eval_basis(&self, j: usize, point: &[f64]) -> f64 {
        debug_assert!(j < self.j_max);
        debug_assert_eq!(point.len(), self.domain_dim());
        let orders = &self.multi_indices[j];
        let mut v = 1.0;
        for (k, &ord) in orders.iter().enumerate() {
            let [lo, hi] = self.domain[k];
            let t = (point[k] - lo) / (hi - lo);
            v *= self.axis_scale(k) * self.eval_unit(ord, t);
        }
        v
    }

    /// Evaluates a coefficient vector as a function on `D`.
    pub fn evaluate(&self, x: &FunctionalElement, point: &[f64]) -> Result<f64> {
        self.check_element(x)?;
        if point.len() != self.domain_dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, domain has {}",
                point.len(),
                self.domain_dim()
            )));
        }
        Ok((0..self.j_max)
            .map(|j| x.coeffs[j] * self.eval_basis(j, point))
            .sum())
    }

    pub fn check_element(&self, x: &FunctionalElement) -> Result<()> {
        if x.coeffs.len() != self.j_max {
            return Err(Error::DimensionMismatch(format!(
                "element has {} coefficients, basis has j_max = {}",
                x.coeffs.len(),
                self.j_max
            )));
        }
        Ok(())
    }

    /// Number of quadrature nodes per axis sufficient for Gram checks and
    /// projections of smooth-per-cell integrands.
    fn quad_nodes(&self) -> usize {
        let max_order = self
            .multi_indices
            .iter()
            .flat_map(|mi| mi.iter().copied())
            .max()
            .unwrap_or(1);
        match self.family {
            // Highest frequency is order/2; GL converges superalgebraically.
            BasisFamily::Fourier => (3 * max_order + 16).max(32),
            // Degree max_order-1; products have degree 2(max_order-1).
            BasisFamily::Legendre => (2 * max_order + 8).max(24),
        }
    }

    fn check_orthonormal(&self) -> Result<()> {
        let d = self.domain_dim();
        let nq = self.quad_nodes();
        // Per-axis nodes/weights.
        let mut axis_nodes = Vec::with_capacity(d);
        for k in 0..d {
            axis_nodes.push(gauss_legendre_on(nq, self.domain[k][0], self.domain[k][1]));
        }
        let w = self.weight();
        let mut gram = vec![0.0; self.j_max * self.j_max];
        let mut idx = vec![0usize; d];
        let mut evals = vec![0.0; self.j_max];
        'nodes: loop {
            let point: Vec<f64> = (0..d).map(|k| axis_nodes[k].0[idx[k]]).collect();
            let weight: f64 = (0..d).map(|k| axis_nodes[k].1[idx[k]]).product::<f64>() * w;
            for (j, e) in evals.iter_mut().enumerate() {
                *e = self.eval_basis(j, &point);
            }
            for i in 0..self.j_max {
                for j in i..self.j_max {
                    gram[i * self.j_max + j] += weight * evals[i] * evals[j];
                }
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < nq {
                    continue 'nodes;
                }
                idx[k] = 0;
            }
            break;
        }
        for i in 0..self.j_max {
            for j in i..self.j_max {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = gram[i * self.j_max + j];
                if (got - want).abs() > GRAM_TOL {
                    return Err(Error::invalid(
                        "basis",
                        format!(
                            "orthonormality violated: <e_{i}, e_{j}> = {got:.3e}, want {want}"
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Projects a function given as a closure onto the basis, integrating
    /// cell-by-cell over the given per-axis breakpoints (which must include
    /// the domain endpoints). Accurate when `f` is smooth within each cell.
    pub fn project_piecewise(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        breakpoints: &[Vec<f64>],
    ) -> Result<FunctionalElement> {
        let d = self.domain_dim();
        if breakpoints.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} breakpoint lists for a {}-dimensional domain",
                breakpoints.len(),
                d
            )));
        }
        let nq = 16usize;
        // Per axis: concatenated GL nodes/weights over all cells.
        let mut axis_nodes: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(d);
        for k in 0..d {
            let bp = &breakpoints[k];
            if bp.len() < 2 {
                return Err(Error::invalid("breakpoints", "need at least one cell per axis"));
            }
            let mut xs = Vec::new();
            let mut ws = Vec::new();
            for c in 0..bp.len() - 1 {
                let (cx, cw) = gauss_legendre_on(nq, bp[c], bp[c + 1]);
                xs.extend(cx);
                ws.extend(cw);
            }
            axis_nodes.push((xs, ws));
        }
        let w = self.weight();
        let mut coeffs = vec![0.0; self.j_max];
        let mut idx = vec![0usize; d];
        'nodes: loop {
            let point: Vec<f64> = (0..d).map(|k| axis_nodes[k].0[idx[k]]).collect();
            let weight: f64 = (0..d).map(|k| axis_nodes[k].1[idx[k]]).product::<f64>() * w;
            let fv = f(&point);
            for (j, c) in coeffs.iter_mut().enumerate() {
                *c += weight * fv * self.eval_basis(j, &point);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < axis_nodes[k].0.len() {
                    continue 'nodes;
                }
                idx[k] = 0;
            }
            break;
        }
        Ok(FunctionalElement::new(coeffs))
    }
}

/// Graded-lexicographic enumeration of per-axis orders: all `(k_1..k_d)` with
/// `Σ (k_i - 1) = g` for `g = 0, 1, …`, lexicographic within each grade.
fn enumerate_multi_indices(d: usize, j_max: usize) -> Vec<Vec<usize>> {
    fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(total + 1);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=total).rev() {
            prefix.push(first + 1);
            compositions(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(j_max);
    let mut grade = 0;
    while out.len() < j_max {
        let mut grade_list = Vec::new();
        compositions(grade, d, &mut Vec::new(), &mut grade_list);
        grade_list.sort();
        for mi in grade_list {
            if out.len() == j_max {
                break;
            }
            out.push(mi);
        }
        grade += 1;
    }
    out
}

/// Coefficient vector of a function in the truncated span. Serialized as the
/// flat coefficient array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionalElement {
    pub coeffs: Vec<f64>,
}

impl FunctionalElement {
    pub fn new(coeffs: Vec<f64>) -> Self {
        FunctionalElement { coeffs }
    }

    pub fn zeros(j_max: usize) -> Self {
        FunctionalElement { coeffs: vec![0.0; j_max] }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Inner product `Σ_j x_j y_j`; requires matching bases (same length).
    pub fn inner(&self, other: &FunctionalElement) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "inner product between elements of {} and {} coefficients",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Hilbert norm `(Σ_j x_j²)^{1/2}`.
    pub fn h_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &FunctionalElement) -> Result<FunctionalElement> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch("add: coefficient count differs".into()));
        }
        Ok(FunctionalElement::new(
            self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &FunctionalElement) -> Result<FunctionalElement> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch("sub: coefficient count differs".into()));
        }
        Ok(FunctionalElement::new(
            self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, t: f64) -> FunctionalElement {
        FunctionalElement::new(self.coeffs.iter().map(|c| c * t).collect())
    }

    /// In-place `self += t * other`. Panics on length mismatch (internal use).
    pub fn axpy(&mut self, t: f64, other: &FunctionalElement) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += t * b;
        }
    }
}

/// Pseudo-metric on coefficient vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PseudoMetric {
    /// The full Hilbert distance on the truncation.
    Full,
    /// Distance of the first `j` coefficients only:
    /// `d_J(x,y) = (Σ_{j'≤J} (x_{j'} - y_{j'})²)^{1/2}`.
    Projection { j: usize },
}

impl PseudoMetric {
    pub fn distance(&self, x: &FunctionalElement, y: &FunctionalElement) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(
                "pseudo-distance between elements of different bases".into(),
            ));
        }
        let take = match *self {
            PseudoMetric::Full => x.len(),
            PseudoMetric::Projection { j } => {
                if j == 0 || j > x.len() {
                    return Err(Error::invalid(
                        "j",
                        format!("projection order must lie in 1..={}, got {j}", x.len()),
                    ));
                }
                j
            }
        };
        Ok(x.coeffs[..take]
            .iter()
            .zip(&y.coeffs[..take])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Grid report of the norm `sup|x| + Lip(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneNormC0 {
    pub sup: f64,
    pub lip: f64,
    pub value: f64,
    pub grid_res: usize,
}

/// Grid approximation (from below) of `sup_u |x(u)| + sup_{u≠v}
/// |x(u)-x(v)| / ‖u-v‖₂` on a regular tensor grid with `grid_res` points per
/// axis. All grid pairs are examined; cost grows like `grid_res^{2d}`.
pub fn one_norm_c0(basis: &BasisSpec, x: &FunctionalElement, grid_res: usize) -> Result<OneNormC0> {
    basis.check_element(x)?;
    if grid_res < 2 {
        return Err(Error::invalid("grid_res", "need at least 2 points per axis"));
    }
    let d = basis.domain_dim();
    let axis_pts: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let [lo, hi] = basis.domain[k];
            (0..grid_res)
                .map(|i| lo + (hi - lo) * i as f64 / (grid_res - 1) as f64)
                .collect()
        })
        .collect();
    // Enumerate grid points and values.
    let mut points = Vec::new();
    let mut idx = vec![0usize; d];
    'grid: loop {
        let p: Vec<f64> = (0..d).map(|k| axis_pts[k][idx[k]]).collect();
        points.push(p);
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < grid_res {
                continue 'grid;
            }
            idx[k] = 0;
        }
        break;
    }
    let values: Vec<f64> = points
        .iter()
        .map(|p| basis.evaluate(x, p).expect("checked dims"))
        .collect();
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut lip = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dist: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist > 0.0 {
                lip = lip.max((values[i] - values[j]).abs() / dist);
            }
        }
    }
    Ok(OneNormC0 { sup, lip, value: sup + lip, grid_res })
}

/// The ball `G(R) = {x : sup|x| + Lip(x) ≤ R}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBall {
    pub radius: f64,
}

impl LipschitzBall {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radius", format!("need R >= 0, got {radius}")));
        }
        Ok(LipschitzBall { radius })
    }

    /// Grid-based membership check (`tol` slack absorbs grid approximation).
    pub fn contains(
        &self,
        basis: &BasisSpec,
        x: &FunctionalElement,
        grid_res: usize,
        tol: f64,
    ) -> Result<bool> {
        Ok(one_norm_c0(basis, x, grid_res)?.value <= self.radius + tol)
    }

    /// Draws a random piecewise-linear function on a one-dimensional domain
    /// with `sup + Lip` norm strictly inside the ball (the exact norm is
    /// computable from knots and slopes), then projects it onto the basis.
    /// Returns the projected element and the exact pre-projection norm.
    pub fn sample_piecewise_linear<R: Rng>(
        &self,
        basis: &BasisSpec,
        rng: &mut R,
    ) -> Result<(FunctionalElement, f64)> {
        if basis.domain_dim() != 1 {
            return Err(Error::invalid(
                "basis",
                "piecewise-linear probes are defined for one-dimensional domains",
            ));
        }
        let [lo, hi] = basis.domain[0];
        let len = hi - lo;
        let knots = rng.gen_range(4usize..=12);
        let xs: Vec<f64> = (0..=knots)
            .map(|i| lo + len * i as f64 / knots as f64)
            .collect();
        // Random bounded walk for knot values.
        let mut vs = Vec::with_capacity(knots + 1);
        let mut v: f64 = rng.gen_range(-1.0..1.0);
        vs.push(v);
        for _ in 0..knots {
            v += rng.gen_range(-0.6..0.6);
            vs.push(v);
        }
        let sup = vs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut lip = 0.0f64;
        for i in 0..knots {
            lip = lip.max((vs[i + 1] - vs[i]).abs() / (xs[i + 1] - xs[i]));
        }
        let raw_norm = sup + lip;
        // Rescale into the ball with a random fill factor, spreading probes
        // over radii instead of piling them on the boundary.
        let target = self.radius * rng.gen_range(0.25..=0.98);
        let scale = if raw_norm > 0.0 { target / raw_norm } else { 0.0 };
        let vs: Vec<f64> = vs.iter().map(|v| v * scale).collect();
        let exact_norm = raw_norm * scale;
        let interp = move |p: &[f64]| -> f64 {
            let u = p[0].clamp(lo, hi);
            let pos = (u - lo) / len * knots as f64;
            let cell = (pos.floor() as usize).min(knots - 1);
            let t = pos - cell as f64;
            vs[cell] * (1.0 - t) + vs[cell + 1] * t
        };
        let elem = basis.project_piecewise(&interp, &[xs.clone()])?;
        Ok((elem, exact_norm))
    }
}

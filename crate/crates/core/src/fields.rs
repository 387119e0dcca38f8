//! Generators of stationary dependent fields `(X_s, Y_s)` on a lattice cube,
//! with analytically certified dependence structure.
//!
//! Three generator kinds:
//! - `FunctionalMa { q }`: a moving average over the causal window
//!   `t ∈ {0,…,q}^N`, `X_s = Σ_t a_t·η_{s+t}`, with independent
//!   coefficient-valued innovations. Because the window is causal, two sites
//!   at lattice distance `k > q` read disjoint innovation sets, so the field
//!   is exactly `q`-dependent: `α(k) = 0` for `k > q`.
//! - `GaussExp { rho }`: Gaussian coefficient fields with covariance
//!   `ρ^{‖s-u‖₁}` per coefficient, built by exact stationary AR(1) filtering
//!   along each axis in turn.
//! - `BernoulliAr1`: the scalar sequence `X_k = (X_{k-1} + ε_k)/2` with coin
//!   flip innovations. Its stationary law is Uniform[0,1] (binary expansion);
//!   the process is not strong mixing and its certificate says so. It is a
//!   pedagogical generator, excluded from mixing-based experiments.
//!
//! Responses are `Y_s = Ψ(X_s) + ε_s` with bounded, centered, coefficient-wise
//! noise drawn independently of `X`.
//!
//! Determinism: every random quantity is drawn from a counter-derived stream
//! keyed by (seed, purpose tag, site coordinates), so output is bit-identical
//! for a given seed regardless of thread count or cube traversal order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hilbert::{BasisSpec, FunctionalElement};
use crate::lattice::LatticeCube;
use crate::numeric;
use crate::rng::{site_stream, tag};
use crate::{Error, Result};

/// Cap on `#sites × #coefficients` for a single generated sample.
pub const MAX_FIELD_VALUES: u64 = 200_000_000;

/// Per-coefficient innovation scale schedule: coefficient `j` (1-based) has
/// standard deviation at most `√(d0·exp(-d1·j))`, so second moments decay as
/// `d0·exp(-d1·j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffDecay {
    pub d0: f64,
    pub d1: f64,
}

impl CoeffDecay {
    pub fn scale(&self, j: usize) -> f64 {
        (self.d0 * (-self.d1 * j as f64).exp()).sqrt()
    }
}

/// Claimed tail envelope for the field norm: `P(‖·‖ ≥ z) ≤ κ0·exp(-κ1·z^γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    pub kappa0: f64,
    pub kappa1: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnovationKind {
    /// Standard normal conditioned on `|z| ≤ cutoff` (bounded support).
    TruncatedGaussian { cutoff: f64 },
    /// Unbounded standard normal.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    FunctionalMa { q: u32 },
    GaussExp { rho: f64 },
    BernoulliAr1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub basis: BasisSpec,
    pub coeff_decay: CoeffDecay,
    pub tail: TailProfile,
    pub innovation: InnovationKind,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Builds a spec, deriving the tail profile from the construction:
    /// bounded fields get the envelope `e·exp(-(z/sup)²)`, Gaussian fields
    /// get `√e·exp(-z²/(4σ²))` from the coefficient variance budget.
    pub fn new(
        kind: GeneratorKind,
        basis: BasisSpec,
        coeff_decay: CoeffDecay,
        innovation: InnovationKind,
        seed: u64,
    ) -> Result<Self> {
        if !(coeff_decay.d0 > 0.0) || !coeff_decay.d0.is_finite() {
            return Err(Error::invalid("d0", format!("need d0 > 0, got {}", coeff_decay.d0)));
        }
        if !(coeff_decay.d1 >= 0.0) || !coeff_decay.d1.is_finite() {
            return Err(Error::invalid("d1", format!("need d1 ≥ 0, got {}", coeff_decay.d1)));
        }
        match kind {
            GeneratorKind::GaussExp { rho } => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::invalid("rho", format!("need 0 ≤ rho < 1, got {rho}")));
                }
            }
            GeneratorKind::FunctionalMa { .. } | GeneratorKind::BernoulliAr1 => {}
        }
        if let InnovationKind::TruncatedGaussian { cutoff } = innovation {
            if !(cutoff > 0.0) || !cutoff.is_finite() {
                return Err(Error::invalid("cutoff", format!("need cutoff > 0, got {cutoff}")));
            }
        }
        let mut spec = GeneratorSpec {
            kind,
            basis,
            coeff_decay,
            tail: TailProfile { kappa0: 1.0, kappa1: 1.0, gamma: 2.0 },
            innovation,
            seed,
        };
        spec.tail = spec.derive_tail();
        Ok(spec)
    }

    /// Restores derived basis state after deserialization.
    pub fn rebuild(&mut self) -> Result<()> {
        self.basis = self.basis.clone().rebuild()?;
        Ok(())
    }

    /// Total coefficient variance budget `Σ_j d0·exp(-d1·j)`.
    pub fn sigma_total_sq(&self) -> f64 {
        (1..=self.basis.j_max).map(|j| self.coeff_decay.scale(j).powi(2)).sum()
    }

    /// Hard bound on `‖X_s‖_H` when one exists (bounded innovations or the
    /// interval-valued Bernoulli chain); `None` for Gaussian tails.
    pub fn x_sup_bound(&self, lattice_dim: usize) -> Option<f64> {
        match (self.kind, self.innovation) {
            (GeneratorKind::BernoulliAr1, _) => Some(0.5),
            (GeneratorKind::FunctionalMa { q }, InnovationKind::TruncatedGaussian { cutoff }) => {
                let (s1, s2) = ma_weight_sums(q, lattice_dim);
                Some(s1 / s2.sqrt() * cutoff * self.sigma_total_sq().sqrt())
            }
            _ => None,
        }
    }

    fn derive_tail(&self) -> TailProfile {
        // The bound is stated for lattice dimension ≤ 3; the ratio S1/√S2 of
        // moving-average weight sums grows with dimension, so take the worst.
        if let Some(sup) = self.x_sup_bound(3) {
            // P = 0 beyond sup; below sup, κ0·exp(-z²/sup²) ≥ 1 with κ0 = e.
            TailProfile {
                kappa0: std::f64::consts::E,
                kappa1: 1.0 / (sup * sup),
                gamma: 2.0,
            }
        } else {
            // Chernoff on exp(λ‖X‖²) with λ = 1/(4σ²): for a centered
            // Gaussian with coefficient variances summing to σ², the moment
            // generating function is at most √e there.
            let sigma_sq = self.sigma_total_sq();
            TailProfile {
                kappa0: std::f64::consts::E.sqrt(),
                kappa1: 1.0 / (4.0 * sigma_sq),
                gamma: 2.0,
            }
        }
    }
}

/// Regression operators `Ψ: H → H` with recorded Hölder data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiKind {
    Zero,
    /// `Ψ(x)_j = λ_j·x_j` (missing `λ_j` are zero).
    LinearDiag { lambda: Vec<f64> },
    /// `Ψ(x)_j = exp(-(j-1))·sin(x_j)`: nonlinear, 1-Lipschitz.
    NonlinearLipschitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub kind: PsiKind,
    /// Hölder order `r ∈ (0, 1]`.
    pub holder_order: f64,
    /// Hölder constant: `‖Ψ(x)-Ψ(y)‖ ≤ L·‖x-y‖^r`.
    pub holder_const: f64,
}

impl PsiSpec {
    pub fn zero() -> Self {
        PsiSpec { kind: PsiKind::Zero, holder_order: 1.0, holder_const: 0.0 }
    }

    pub fn linear_diag(lambda: Vec<f64>) -> Self {
        let l = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        PsiSpec { kind: PsiKind::LinearDiag { lambda }, holder_order: 1.0, holder_const: l }
    }

    pub fn nonlinear() -> Self {
        PsiSpec { kind: PsiKind::NonlinearLipschitz, holder_order: 1.0, holder_const: 1.0 }
    }

    pub fn apply(&self, x: &FunctionalElement) -> FunctionalElement {
        match &self.kind {
            PsiKind::Zero => FunctionalElement::zeros(x.len()),
            PsiKind::LinearDiag { lambda } => {
                let coeffs = x
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| lambda.get(i).copied().unwrap_or(0.0) * c)
                    .collect();
                FunctionalElement::new(coeffs)
            }
            PsiKind::NonlinearLipschitz => {
                let coeffs = x
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| (-(i as f64)).exp() * c.sin())
                    .collect();
                FunctionalElement::new(coeffs)
            }
        }
    }
}

/// A generated field: `x[rank]`, `y[rank]` indexed by the cube's site rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub cube: LatticeCube,
    pub x: Vec<FunctionalElement>,
    pub y: Vec<FunctionalElement>,
    pub spec: GeneratorSpec,
    pub psi: PsiSpec,
    pub noise_scale: f64,
}

impl FieldSample {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The series of coefficient `j` (1-based) of `X` in site-rank order.
    pub fn coefficient_series(&self, j: usize) -> Vec<f64> {
        self.x.iter().map(|e| e.coeffs[j - 1]).collect()
    }

    /// Recovers the noise `ε_s = Y_s - Ψ(X_s)` exactly.
    pub fn residual(&self, rank: usize) -> FunctionalElement {
        self.y[rank].sub(&self.psi.apply(&self.x[rank])).expect("same basis")
    }

    /// Hard bound on `‖Y_s‖_H` when the X field is bounded.
    pub fn y_sup_bound(&self) -> Option<f64> {
        let xb = self.spec.x_sup_bound(self.cube.dim())?;
        let noise_sup = self.noise_scale * self.spec.sigma_total_sq().sqrt();
        // ‖Ψ(x)‖ ≤ ‖Ψ(0)‖ + L·‖x‖^r and Ψ(0) = 0 for all shipped kinds.
        Some(self.psi.holder_const * xb.powf(self.psi.holder_order) + noise_sup)
    }
}

/// Analytic dependence certificate attached to a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaBound {
    /// `α(k) ≤ c0·exp(-c1·k)`, exactly zero beyond `zero_beyond` if set.
    Exponential { c0: f64, c1: f64, zero_beyond: Option<u32> },
    /// The generator is certified *not* strong mixing.
    NotMixing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceCertificate {
    pub alpha: AlphaBound,
    /// Bound on the summed weak-dependence coefficients of the Lipschitz
    /// test class, when one is certified.
    pub phi_sum_bound: Option<f64>,
    pub applies_to: GeneratorKind,
}

impl DependenceCertificate {
    /// Certified `α(k)` bound, `None` if the generator is not mixing.
    pub fn alpha_at(&self, k: u32) -> Option<f64> {
        match self.alpha {
            AlphaBound::Exponential { c0, c1, zero_beyond } => {
                if zero_beyond.is_some_and(|z| k > z) {
                    Some(0.0)
                } else {
                    Some(c0 * (-c1 * k as f64).exp())
                }
            }
            AlphaBound::NotMixing => None,
        }
    }

    pub fn is_mixing(&self) -> bool {
        matches!(self.alpha, AlphaBound::Exponential { .. })
    }
}

/// Sums `Σ e^{-‖t‖∞}` and `Σ e^{-2‖t‖∞}` over the causal window `{0..q}^N`.
fn ma_weight_sums(q: u32, dim: usize) -> (f64, f64) {
    // #\{t ∈ {0..q}^N : ‖t‖∞ = m\} = (m+1)^N - m^N.
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for m in 0..=q as u64 {
        let count = ((m + 1).pow(dim as u32) - m.pow(dim as u32)) as f64;
        s1 += count * (-(m as f64)).exp();
        s2 += count * (-2.0 * m as f64).exp();
    }
    (s1, s2)
}

/// Derives the dependence certificate for a generator on an `N`-dimensional
/// lattice.
///
/// - `FunctionalMa { q }`: the causal window gives exact `q`-dependence, so
///   `α(k) = 0` for `k > q`; for `k ≤ q` the trivial bound `α ≤ 1/4` is
///   certified through `c0 = max(1, e^{q}/4)`, `c1 = 1`. With bounded
///   innovations the Lipschitz-class coefficients vanish beyond `q` as well,
///   giving `Σφ ≤ 2·q·sup‖X‖`.
/// - `GaussExp { rho }`: for jointly Gaussian σ-fields the α-coefficient is
///   at most their maximal correlation; bounding the cross-block correlation
///   operator by its summed entries and the within-block spectra through the
///   AR(1) spectral density range `[(1-ρ)/(1+ρ), (1+ρ)/(1-ρ)]` per axis gives
///   `α(k) ≤ 2N·(1+ρ)^{2N-1}/(1-ρ)^{2N}·ρ^k`.
/// - `BernoulliAr1`: not strong mixing; its per-step contraction by 1/2 gives
///   a summed coupling bound of 1 for 1-Lipschitz test functions.
pub fn certificate(spec: &GeneratorSpec, lattice_dim: usize) -> DependenceCertificate {
    match spec.kind {
        GeneratorKind::FunctionalMa { q } => {
            let phi = match spec.innovation {
                _ if q == 0 => Some(0.0),
                InnovationKind::TruncatedGaussian { .. } => spec
                    .x_sup_bound(lattice_dim)
                    .map(|sup| 2.0 * q as f64 * sup),
                InnovationKind::Gaussian => None,
            };
            DependenceCertificate {
                alpha: AlphaBound::Exponential {
                    c0: (q as f64).exp() / 4.0,
                    c1: 1.0,
                    zero_beyond: Some(q),
                }
                .with_c0_at_least_one(),
                phi_sum_bound: phi,
                applies_to: spec.kind,
            }
        }
        GeneratorKind::GaussExp { rho } => {
            if rho == 0.0 {
                DependenceCertificate {
                    alpha: AlphaBound::Exponential { c0: 1.0, c1: 1.0, zero_beyond: Some(0) },
                    phi_sum_bound: Some(0.0),
                    applies_to: spec.kind,
                }
            } else {
                let n = lattice_dim as f64;
                let c0 = 2.0 * n * (1.0 + rho).powf(2.0 * n - 1.0) / (1.0 - rho).powf(2.0 * n);
                DependenceCertificate {
                    alpha: AlphaBound::Exponential {
                        c0: c0.max(1.0),
                        c1: -rho.ln(),
                        zero_beyond: None,
                    },
                    phi_sum_bound: None,
                    applies_to: spec.kind,
                }
            }
        }
        GeneratorKind::BernoulliAr1 => DependenceCertificate {
            alpha: AlphaBound::NotMixing,
            phi_sum_bound: Some(1.0),
            applies_to: spec.kind,
        },
    }
}

impl AlphaBound {
    fn with_c0_at_least_one(self) -> Self {
        match self {
            AlphaBound::Exponential { c0, c1, zero_beyond } => {
                AlphaBound::Exponential { c0: c0.max(1.0), c1, zero_beyond }
            }
            other => other,
        }
    }
}

fn draw_innovation(kind: InnovationKind, rng: &mut impl rand::Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    match kind {
        InnovationKind::Gaussian => StandardNormal.sample(rng),
        InnovationKind::TruncatedGaussian { cutoff } => loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= cutoff {
                return z;
            }
        },
    }
}

/// Generates `(X_s, Y_s)` on the cube. Deterministic given `spec.seed`;
/// independent of thread count.
pub fn generate(
    spec: &GeneratorSpec,
    psi: &PsiSpec,
    cube: &LatticeCube,
    noise_scale: f64,
) -> Result<FieldSample> {
    let j_max = spec.basis.j_max;
    if cube.num_sites().saturating_mul(j_max as u64) > MAX_FIELD_VALUES {
        return Err(Error::ResourceCap(format!(
            "sites × coefficients = {} exceeds {MAX_FIELD_VALUES}",
            cube.num_sites() * j_max as u64
        )));
    }
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::invalid("noise_scale", format!("need ≥ 0, got {noise_scale}")));
    }
    if !(0.0..=1.0).contains(&psi.holder_order) || psi.holder_order <= 0.0 {
        return Err(Error::invalid(
            "holder_order",
            format!("need r in (0, 1], got {}", psi.holder_order),
        ));
    }
    let x = match spec.kind {
        GeneratorKind::FunctionalMa { q } => generate_ma(spec, cube, q)?,
        GeneratorKind::GaussExp { rho } => generate_gauss_exp(spec, cube, rho)?,
        GeneratorKind::BernoulliAr1 => generate_bernoulli_field(spec, cube)?,
    };
    let scales: Vec<f64> = (1..=j_max).map(|j| spec.coeff_decay.scale(j)).collect();
    let sites: Vec<Vec<i64>> = cube.sites().collect();
    let y: Vec<FunctionalElement> = sites
        .par_iter()
        .zip(x.par_iter())
        .map(|(coords, xs)| {
            let mut e = psi.apply(xs);
            if noise_scale > 0.0 {
                let mut rng = site_stream(spec.seed, tag::NOISE, coords);
                for (j, c) in e.coeffs.iter_mut().enumerate() {
                    let u: f64 = rand::Rng::gen_range(&mut rng, -1.0..=1.0);
                    *c += noise_scale * scales[j] * u;
                }
            }
            e
        })
        .collect();
    Ok(FieldSample { cube: cube.clone(), x, y, spec: spec.clone(), psi: psi.clone(), noise_scale })
}

fn generate_ma(spec: &GeneratorSpec, cube: &LatticeCube, q: u32) -> Result<Vec<FunctionalElement>> {
    let dim = cube.dim();
    let j_max = spec.basis.j_max;
    let scales: Vec<f64> = (1..=j_max).map(|j| spec.coeff_decay.scale(j)).collect();
    // Window offsets in lexicographic order with normalized weights.
    let mut offsets: Vec<(Vec<i64>, f64)> = Vec::new();
    let mut idx = vec![0i64; dim];
    loop {
        let m = idx.iter().copied().max().unwrap_or(0);
        offsets.push((idx.clone(), (-(m as f64)).exp()));
        let mut k = dim;
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] <= q as i64 {
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
    let norm: f64 = offsets.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    for (_, w) in offsets.iter_mut() {
        *w /= norm;
    }
    // Innovations on the extended cube (site + causal window stays inside).
    let ext_edges: Vec<u32> = cube.edges().iter().map(|&n| n + q).collect();
    let ext = LatticeCube::new(ext_edges)?;
    if ext.num_sites().saturating_mul(j_max as u64) > MAX_FIELD_VALUES {
        return Err(Error::ResourceCap(format!(
            "extended innovation lattice needs {} values",
            ext.num_sites() * j_max as u64
        )));
    }
    let ext_sites: Vec<Vec<i64>> = ext.sites().collect();
    let innovations: Vec<Vec<f64>> = ext_sites
        .par_iter()
        .map(|coords| {
            let mut rng = site_stream(spec.seed, tag::INNOVATION, coords);
            (0..j_max)
                .map(|j| scales[j] * draw_innovation(spec.innovation, &mut rng))
                .collect()
        })
        .collect();
    let sites: Vec<Vec<i64>> = cube.sites().collect();
    let x: Vec<FunctionalElement> = sites
        .par_iter()
        .map(|coords| {
            let mut acc = vec![0.0f64; j_max];
            let mut shifted = vec![0i64; dim];
            for (t, w) in &offsets {
                for k in 0..dim {
                    shifted[k] = coords[k] + t[k];
                }
                let rank = ext.rank_of_coords(&shifted).expect("window inside extended cube");
                for (a, v) in acc.iter_mut().zip(&innovations[rank as usize]) {
                    *a += w * v;
                }
            }
            FunctionalElement::new(acc)
        })
        .collect();
    Ok(x)
}

fn generate_gauss_exp(
    spec: &GeneratorSpec,
    cube: &LatticeCube,
    rho: f64,
) -> Result<Vec<FunctionalElement>> {
    let dim = cube.dim();
    let j_max = spec.basis.j_max;
    let sites: Vec<Vec<i64>> = cube.sites().collect();
    // Raw i.i.d. standard normals per (site, coefficient).
    let mut values: Vec<Vec<f64>> = sites
        .par_iter()
        .map(|coords| {
            let mut rng = site_stream(spec.seed, tag::GAUSS, coords);
            (0..j_max).map(|_| draw_innovation(InnovationKind::Gaussian, &mut rng)).collect()
        })
        .collect();
    // Exact stationary AR(1) filter along each axis in turn: the first entry
    // of a line keeps its unit-variance draw (stationary start), later ones
    // follow v[i] = ρ·v[i-1] + √(1-ρ²)·v_raw[i].
    if rho > 0.0 {
        let edges = cube.edges().to_vec();
        let innov = (1.0 - rho * rho).sqrt();
        for axis in 0..dim {
            let len = edges[axis] as usize;
            // stride between consecutive sites along `axis` in rank order
            let stride: usize = edges[axis + 1..].iter().map(|&e| e as usize).product();
            let line_count = values.len() / len;
            for line in 0..line_count {
                // Ranks of the line: the axis coordinate varies; all others
                // fixed. Decompose line index into (prefix, suffix) blocks.
                let suffix = line % stride;
                let prefix = line / stride;
                let base = prefix * stride * len + suffix;
                for i in 1..len {
                    let prev = base + (i - 1) * stride;
                    let cur = base + i * stride;
                    for j in 0..j_max {
                        values[cur][j] = rho * values[prev][j] + innov * values[cur][j];
                    }
                }
            }
        }
    }
    let scales: Vec<f64> = (1..=j_max).map(|j| spec.coeff_decay.scale(j)).collect();
    Ok(values
        .into_iter()
        .map(|mut v| {
            for (j, c) in v.iter_mut().enumerate() {
                *c *= scales[j];
            }
            FunctionalElement::new(v)
        })
        .collect())
}

/// Stationary value of the Bernoulli chain at absolute position `pos`:
/// `Σ_{i=0}^{52} bit(pos-i)·2^{-(i+1)}`, the 53-bit binary expansion whose
/// bits are the innovations. Exact in f64.
fn bernoulli_value(seed: u64, pos: i64) -> f64 {
    let mut m: u64 = 0;
    for i in 0..53i64 {
        let mut rng = site_stream(seed, tag::INNOVATION, &[pos - i]);
        let bit = rand::Rng::gen::<u64>(&mut rng) & 1;
        m |= bit << (52 - i);
    }
    m as f64 / 9007199254740992.0 // 2^53
}

/// Stationary Bernoulli AR(1) sequence of the given length. Values lie in
/// `[0, 1)` and the marginal law is Uniform[0,1] up to the 2^-53 truncation.
pub fn generate_bernoulli_ar1(seed: u64, length: usize) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::invalid("length", "need length ≥ 1"));
    }
    Ok((1..=length as i64)
        .into_par_iter()
        .map(|pos| bernoulli_value(seed, pos))
        .collect())
}

/// The recursion `x_{k} = (x_{k-1} + innovations[k])/2` from a given start,
/// returned including the start value.
pub fn bernoulli_ar1_path(x0: f64, innovations: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(innovations.len() + 1);
    out.push(x0);
    let mut x = x0;
    for &e in innovations {
        x = 0.5 * (x + e);
        out.push(x);
    }
    out
}

fn generate_bernoulli_field(
    spec: &GeneratorSpec,
    cube: &LatticeCube,
) -> Result<Vec<FunctionalElement>> {
    if cube.dim() != 1 {
        return Err(Error::invalid(
            "kind",
            "bernoulli_ar1 generates one-dimensional scalar sequences only",
        ));
    }
    let vals = generate_bernoulli_ar1(spec.seed, cube.num_sites() as usize)?;
    let j_max = spec.basis.j_max;
    Ok(vals
        .into_iter()
        .map(|v| {
            let mut coeffs = vec![0.0; j_max];
            coeffs[0] = v - 0.5; // centered; all other coefficients zero
            FunctionalElement::new(coeffs)
        })
        .collect())
}

/// Empirical audit of the recorded assumptions. Flags violations in the
/// report instead of failing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Empirical `E⟨X, e_j⟩²` per coefficient.
    pub coeff_second_moments: Vec<f64>,
    /// Fitted slope of `ln E⟨X, e_j⟩²` against `j`.
    pub decay_slope: Option<f64>,
    /// Slope within 0.1 of the scheduled `-d1`.
    pub decay_ok: bool,
    /// Rows `(z, empirical P(‖Y‖ ≥ z), certified envelope)`.
    pub tail_grid: Vec<(f64, f64, f64)>,
    pub tail_ok: bool,
    /// Max of `‖Ψ(x)-Ψ(y)‖ / ‖x-y‖^r` over sampled and designed pairs.
    pub holder_max_ratio: f64,
    pub holder_ok: bool,
}

pub fn audit_assumptions(sample: &FieldSample) -> Result<AssumptionReport> {
    if sample.is_empty() {
        return Err(Error::InsufficientData("empty field sample".into()));
    }
    let j_max = sample.spec.basis.j_max;
    let n = sample.len() as f64;
    let mut coeff_second_moments = vec![0.0; j_max];
    for e in &sample.x {
        for (j, &c) in e.coeffs.iter().enumerate() {
            coeff_second_moments[j] += c * c;
        }
    }
    for m in coeff_second_moments.iter_mut() {
        *m /= n;
    }
    // Slope of the log second moment across coefficients with mass.
    let pts: Vec<(f64, f64)> = coeff_second_moments
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(j, &m)| ((j + 1) as f64, m.ln()))
        .collect();
    let (decay_slope, decay_ok) = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let fit = numeric::linear_fit(&xs, &ys)?;
        (Some(fit.slope), (fit.slope + sample.spec.coeff_decay.d1).abs() <= 0.1)
    } else {
        (None, true)
    };
    // Tail of ‖Y‖ against the certified envelope transported through Ψ and
    // the noise bound: ‖Y‖ ≥ z forces ‖X‖ ≥ ((z - shift)/L)^{1/r}.
    let norms: Vec<f64> = sample.y.iter().map(|e| e.h_norm()).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    let shift = sample.noise_scale * sample.spec.sigma_total_sq().sqrt();
    let l = sample.psi.holder_const;
    let r = sample.psi.holder_order;
    let tail = sample.spec.tail;
    let mut tail_grid = Vec::new();
    let mut tail_ok = true;
    for i in 1..=12 {
        let z = max_norm * 1.05 * i as f64 / 12.0;
        let emp = norms.iter().filter(|&&v| v >= z).count() as f64 / n;
        let envelope = if l == 0.0 {
            if z > shift {
                0.0
            } else {
                1.0
            }
        } else {
            let x_level = ((z - shift).max(0.0) / l).powf(1.0 / r);
            (tail.kappa0 * (-tail.kappa1 * x_level.powf(tail.gamma)).exp()).min(1.0)
        };
        // Allow Monte Carlo slack of 3 binomial standard errors.
        let slack = 3.0 * (envelope.max(1e-12) * (1.0 - envelope.min(1.0)) / n).sqrt();
        if emp > envelope + slack + 1e-12 {
            tail_ok = false;
        }
        tail_grid.push((z, emp, envelope));
    }
    // Hölder ratio over sampled pairs plus designed single-coordinate pairs.
    let mut holder_max_ratio: f64 = 0.0;
    let step = (sample.len() / 200).max(1);
    let picked: Vec<&FunctionalElement> = sample.x.iter().step_by(step).collect();
    for (i, a) in picked.iter().enumerate() {
        for b in picked.iter().skip(i + 1) {
            let d = a.sub(b)?.h_norm();
            if d > 1e-12 {
                let num = sample.psi.apply(a).sub(&sample.psi.apply(b))?.h_norm();
                holder_max_ratio = holder_max_ratio.max(num / d.powf(r));
            }
        }
    }
    for j in 0..j_max {
        let mut probe = FunctionalElement::zeros(j_max);
        probe.coeffs[j] = 1e-3;
        let zero = FunctionalElement::zeros(j_max);
        let d = probe.h_norm();
        let num = sample.psi.apply(&probe).sub(&sample.psi.apply(&zero))?.h_norm();
        holder_max_ratio = holder_max_ratio.max(num / d.powf(r));
    }
    let holder_ok = holder_max_ratio <= sample.psi.holder_const * (1.0 + 1e-9) + 1e-12;
    Ok(AssumptionReport {
        coeff_second_moments,
        decay_slope,
        decay_ok,
        tail_grid,
        tail_ok,
        holder_max_ratio,
        holder_ok,
    })
}

/// Sidecar metadata written next to a field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub spec: GeneratorSpec,
    pub psi: PsiSpec,
    pub noise_scale: f64,
    pub certificate: DependenceCertificate,
    /// "generated" for our own output, "user-supplied" after import.
    pub provenance: String,
}

/// Writes `sample` as CSV (site coords, X coefficients, Y coefficients) with
/// a JSON sidecar carrying spec and certificate.
pub fn write_field_csv(
    csv_path: &std::path::Path,
    sidecar_path: &std::path::Path,
    sample: &FieldSample,
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    let dim = sample.cube.dim();
    let j_max = sample.spec.basis.j_max;
    let mut header: Vec<String> = (1..=dim).map(|k| format!("s{k}")).collect();
    header.extend((1..=j_max).map(|j| format!("x{j}")));
    header.extend((1..=j_max).map(|j| format!("y{j}")));
    writeln!(out, "{}", header.join(","))?;
    for (rank, coords) in sample.cube.sites().enumerate() {
        let mut row: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
        row.extend(sample.x[rank].coeffs.iter().map(|v| v.to_string()));
        row.extend(sample.y[rank].coeffs.iter().map(|v| v.to_string()));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    let sidecar = FieldSidecar {
        spec: sample.spec.clone(),
        psi: sample.psi.clone(),
        noise_scale: sample.noise_scale,
        certificate: certificate(&sample.spec, dim),
        provenance: "generated".into(),
    };
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a field CSV + sidecar back into a sample. The certificate in the
/// returned sidecar is marked "user-supplied" since we did not generate it.
pub fn read_field_csv(
    csv_path: &std::path::Path,
    sidecar_path: &std::path::Path,
) -> Result<(FieldSample, FieldSidecar)> {
    let mut sidecar: FieldSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    sidecar.spec.rebuild()?;
    sidecar.provenance = "user-supplied".into();
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty field CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let dim = cols.iter().take_while(|c| c.starts_with('s')).count();
    let j_max = sidecar.spec.basis.j_max;
    if cols.len() != dim + 2 * j_max {
        return Err(Error::Parse(format!(
            "field CSV has {} columns, expected {} coords + 2×{} coefficients",
            cols.len(),
            dim,
            j_max
        )));
    }
    let mut coords_list: Vec<Vec<i64>> = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != cols.len() {
            return Err(Error::Parse(format!("ragged field CSV row: {line}")));
        }
        let coords: Vec<i64> = vals[..dim]
            .iter()
            .map(|v| v.parse().map_err(|e| Error::Parse(format!("bad coord {v}: {e}"))))
            .collect::<Result<_>>()?;
        let parse_f = |v: &str| -> Result<f64> {
            v.parse().map_err(|e| Error::Parse(format!("bad value {v}: {e}")))
        };
        let xc: Vec<f64> =
            vals[dim..dim + j_max].iter().map(|v| parse_f(v)).collect::<Result<_>>()?;
        let yc: Vec<f64> =
            vals[dim + j_max..].iter().map(|v| parse_f(v)).collect::<Result<_>>()?;
        coords_list.push(coords);
        x.push(FunctionalElement::new(xc));
        y.push(FunctionalElement::new(yc));
    }
    // Recover the cube from the coordinate ranges.
    let edges: Vec<u32> = (0..dim)
        .map(|k| coords_list.iter().map(|c| c[k]).max().unwrap_or(1) as u32)
        .collect();
    let cube = LatticeCube::new(edges)?;
    if cube.num_sites() as usize != x.len() {
        return Err(Error::Parse(format!(
            "field CSV has {} rows but the recovered cube holds {} sites",
            x.len(),
            cube.num_sites()
        )));
    }
    let sample = FieldSample {
        cube,
        x,
        y,
        spec: sidecar.spec.clone(),
        psi: sidecar.psi.clone(),
        noise_scale: sidecar.noise_scale,
    };
    Ok((sample, sidecar))
}

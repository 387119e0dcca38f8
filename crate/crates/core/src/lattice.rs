//! Rectangular lattice geometry.
//!
//! Observation regions are cubes `I_n = {s ∈ Z^N : 1 ≤ s_k ≤ n_k}`. Sums over
//! such regions are analyzed through two volume decompositions of the
//! continuous box `(0, A]` (with `A_k = n_k`):
//!
//! * **parity block covers** — `2^N` classes of disjoint blocks of edge `P_k`
//!   per axis that jointly tile `(0, A]`, with blocks of the same class at
//!   `ℓ∞` distance at least `min_k P_k` from each other;
//! * **Cantor partitions** — iterated removal of a centered `δ` fraction per
//!   axis, leaving `2^{N·l}` well-separated outer boxes after `l` refinements.
//!
//! The embedding convention identifying sums with integrals maps the site `s`
//! to the half-open unit cell `Π_k (s_k - 1, s_k]`, so a real point `u` belongs
//! to the cell of site `s_k = ⌈u_k⌉`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The index cube `{s ∈ Z^N : 1 ≤ s_k ≤ n_k}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeCube {
    n: Vec<u32>,
}

impl LatticeCube {
    pub fn new(n: Vec<u32>) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::invalid("n", "lattice dimension must be at least 1"));
        }
        if n.iter().any(|&e| e == 0) {
            return Err(Error::invalid("n", format!("all edges must be >= 1, got {n:?}")));
        }
        let mut sites: u64 = 1;
        for &e in &n {
            sites = sites.checked_mul(e as u64).ok_or_else(|| {
                Error::ResourceCap(format!("site count overflows u64 for edges {n:?}"))
            })?;
        }
        Ok(LatticeCube { n })
    }

    /// Convenience constructor for the cube with equal edges `k`.
    pub fn square(dim: usize, k: u32) -> Result<Self> {
        LatticeCube::new(vec![k; dim])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn edges(&self) -> &[u32] {
        &self.n
    }

    pub fn num_sites(&self) -> u64 {
        self.n.iter().map(|&e| e as u64).product()
    }

    /// Effective sample size `|I_n|^{1/N}`: the quantity that governs the
    /// exponential decay rates on lattices of dimension `N`.
    pub fn effective_sample_size(&self) -> f64 {
        (self.num_sites() as f64).powf(1.0 / self.dim() as f64)
    }

    /// Lexicographic site enumeration, first coordinate most significant:
    /// `(1,..,1), (1,..,2), …`.
    pub fn sites(&self) -> SiteIter<'_> {
        SiteIter { cube: self, next_rank: 0 }
    }

    /// Coordinates of the site with the given lexicographic rank.
    pub fn coords_of_rank(&self, rank: u64) -> Vec<i64> {
        debug_assert!(rank < self.num_sites());
        let mut coords = vec![0i64; self.dim()];
        let mut rem = rank;
        for k in (0..self.dim()).rev() {
            let e = self.n[k] as u64;
            coords[k] = (rem % e) as i64 + 1;
            rem /= e;
        }
        coords
    }

    pub fn rank_of_coords(&self, coords: &[i64]) -> Option<u64> {
        if coords.len() != self.dim() || !self.contains(coords) {
            return None;
        }
        let mut rank = 0u64;
        for k in 0..self.dim() {
            rank = rank * self.n[k] as u64 + (coords[k] as u64 - 1);
        }
        Some(rank)
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        site.len() == self.dim()
            && site
                .iter()
                .zip(&self.n)
                .all(|(&s, &e)| s >= 1 && s <= e as i64)
    }

    /// The half-open unit cell `Π_k (s_k - 1, s_k]` assigned to a site by the
    /// sum-to-integral embedding.
    pub fn site_cell(&self, site: &[i64]) -> Option<HalfOpenBox> {
        if !self.contains(site) {
            return None;
        }
        Some(HalfOpenBox::new(
            site.iter().map(|&s| [s as f64 - 1.0, s as f64]).collect(),
        ))
    }

    /// The site whose cell contains the real point `u ∈ (0, n]`:
    /// `s_k = ⌈u_k⌉`.
    pub fn site_of_point(&self, point: &[f64]) -> Option<Vec<i64>> {
        if point.len() != self.dim() {
            return None;
        }
        let site: Vec<i64> = point.iter().map(|&u| u.ceil() as i64).collect();
        if self.contains(&site) {
            Some(site)
        } else {
            None
        }
    }

    /// Continuous box `(0, A]` with `A_k = n_k`, the region partitioned by
    /// block covers and Cantor partitions.
    pub fn continuous_edges(&self) -> Vec<f64> {
        self.n.iter().map(|&e| e as f64).collect()
    }
}

pub struct SiteIter<'a> {
    cube: &'a LatticeCube,
    next_rank: u64,
}

impl Iterator for SiteIter<'_> {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        if self.next_rank >= self.cube.num_sites() {
            return None;
        }
        let coords = self.cube.coords_of_rank(self.next_rank);
        self.next_rank += 1;
        Some(coords)
    }
}

/// Abstract cube size: number of sites plus lattice dimension. Closed-form
/// bounds are routinely examined at sizes far beyond anything simulable, so
/// the site count is a real number here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeSize {
    pub sites: f64,
    pub dim: usize,
}

impl CubeSize {
    pub fn new(sites: f64, dim: usize) -> Result<Self> {
        if !(sites >= 1.0) || dim == 0 {
            return Err(Error::invalid(
                "cube_size",
                format!("need sites >= 1 and dim >= 1, got sites={sites}, dim={dim}"),
            ));
        }
        Ok(CubeSize { sites, dim })
    }

    pub fn effective_sample_size(&self) -> f64 {
        self.sites.powf(1.0 / self.dim as f64)
    }

    pub fn ln_sites(&self) -> f64 {
        self.sites.ln()
    }
}

impl From<&LatticeCube> for CubeSize {
    fn from(cube: &LatticeCube) -> Self {
        CubeSize { sites: cube.num_sites() as f64, dim: cube.dim() }
    }
}

/// Outcome of the aspect-ratio check `min_k n_k ≥ C' · max_k n_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectRatioCert {
    pub c_prime: f64,
    pub min_edge: u32,
    pub max_edge: u32,
    pub satisfied: bool,
}

/// Checks the aspect-ratio condition with constant `c_prime ∈ (0, 1]`.
pub fn check_aspect_ratio(cube: &LatticeCube, c_prime: f64) -> Result<AspectRatioCert> {
    if !(c_prime > 0.0 && c_prime <= 1.0) {
        return Err(Error::invalid(
            "c_prime",
            format!("aspect constant must lie in (0, 1], got {c_prime}"),
        ));
    }
    let min_edge = *cube.edges().iter().min().expect("nonempty");
    let max_edge = *cube.edges().iter().max().expect("nonempty");
    Ok(AspectRatioCert {
        c_prime,
        min_edge,
        max_edge,
        satisfied: min_edge as f64 >= c_prime * max_edge as f64,
    })
}

/// Axis-aligned half-open box `Π_k (lo_k, hi_k]`, serialized as per-axis
/// `[lo, hi]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HalfOpenBox {
    pub bounds: Vec<[f64; 2]>,
}

impl HalfOpenBox {
    pub fn new(bounds: Vec<[f64; 2]>) -> Self {
        HalfOpenBox { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|b| (b[1] - b[0]).max(0.0)).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && self
                .bounds
                .iter()
                .zip(point)
                .all(|(b, &u)| u > b[0] && u <= b[1])
    }

    /// Is this box a subset of `other` (up to `tol` slack per face)?
    pub fn subset_of(&self, other: &HalfOpenBox, tol: f64) -> bool {
        self.dim() == other.dim()
            && self
                .bounds
                .iter()
                .zip(&other.bounds)
                .all(|(a, b)| a[0] >= b[0] - tol && a[1] <= b[1] + tol)
    }

    /// Do the interiors overlap?
    pub fn overlaps(&self, other: &HalfOpenBox) -> bool {
        debug_assert_eq!(self.dim(), other.dim());
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|(a, b)| a[0] < b[1] && b[0] < a[1])
    }

    /// `ℓ∞` distance between boxes: `max_k dist((lo_k, hi_k], (lo'_k, hi'_k])`.
    pub fn linf_distance(&self, other: &HalfOpenBox) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.bounds
            .iter()
            .zip(&other.bounds)
            .map(|(a, b)| {
                if a[0] < b[1] && b[0] < a[1] {
                    0.0
                } else if a[1] <= b[0] {
                    b[0] - a[1]
                } else {
                    a[0] - b[1]
                }
            })
            .fold(0.0, f64::max)
    }
}

/// One parity class of a big-block cover: all blocks whose axis-`k` interval
/// has the parity `parity[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockClass {
    /// Per-axis parity bits in `{0, 1}`.
    pub parity: Vec<u8>,
    pub blocks: Vec<HalfOpenBox>,
}

/// Big-block parity cover of `(0, A]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCover {
    pub edges: Vec<f64>,
    pub block_edges: Vec<f64>,
    pub classes: Vec<BlockClass>,
}

/// Default block edges `P_k = A_k^{N/(N+1)}`, the choice balancing block count
/// against block size in the big-block argument.
pub fn default_block_edges(a: &[f64]) -> Vec<f64> {
    let n = a.len() as f64;
    a.iter().map(|&ak| ak.powf(n / (n + 1.0))).collect()
}

/// Decomposes `(0, A]` into `2^N` parity classes of disjoint blocks with edge
/// `P_k` along axis `k` (the last block per axis clipped at `A_k`). Within a
/// class, distinct blocks are at `ℓ∞` distance at least `min_k P_k`.
///
/// Requires `0 < P_k ≤ A_k / 2` for every axis.
pub fn block_cover(a: &[f64], p: &[f64]) -> Result<BlockCover> {
    if a.is_empty() {
        return Err(Error::invalid("a", "at least one axis required"));
    }
    if a.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "block_cover: {} edges vs {} block edges",
            a.len(),
            p.len()
        )));
    }
    for (k, (&ak, &pk)) in a.iter().zip(p).enumerate() {
        if !(ak > 0.0) {
            return Err(Error::invalid("a", format!("edge {k} must be positive, got {ak}")));
        }
        if !(pk > 0.0) || pk > ak / 2.0 {
            return Err(Error::invalid(
                "p",
                format!("block edge {k} must satisfy 0 < P <= A/2, got P={pk}, A={ak}"),
            ));
        }
    }
    let dim = a.len();
    // Per axis and parity bit, the clipped intervals ((2v+b)P, (2v+b+1)P] ∩ (0, A].
    let mut axis_intervals: Vec<[Vec<[f64; 2]>; 2]> = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut per_parity: [Vec<[f64; 2]>; 2] = [Vec::new(), Vec::new()];
        let mut idx = 0u64;
        loop {
            let lo = idx as f64 * p[k];
            if lo >= a[k] {
                break;
            }
            let hi = ((idx + 1) as f64 * p[k]).min(a[k]);
            per_parity[(idx % 2) as usize].push([lo, hi]);
            idx += 1;
        }
        axis_intervals.push(per_parity);
    }
    // One class per parity vector; blocks are the tensor products.
    let mut classes = Vec::with_capacity(1 << dim);
    for mask in 0u32..(1 << dim) {
        let parity: Vec<u8> = (0..dim).map(|k| ((mask >> k) & 1) as u8).collect();
        let lists: Vec<&Vec<[f64; 2]>> = (0..dim)
            .map(|k| &axis_intervals[k][parity[k] as usize])
            .collect();
        let mut blocks = Vec::new();
        if lists.iter().all(|l| !l.is_empty()) {
            let mut idx = vec![0usize; dim];
            'outer: loop {
                blocks.push(HalfOpenBox::new(
                    (0..dim).map(|k| lists[k][idx[k]]).collect(),
                ));
                for k in (0..dim).rev() {
                    idx[k] += 1;
                    if idx[k] < lists[k].len() {
                        continue 'outer;
                    }
                    idx[k] = 0;
                }
                break;
            }
        }
        classes.push(BlockClass { parity, blocks });
    }
    Ok(BlockCover {
        edges: a.to_vec(),
        block_edges: p.to_vec(),
        classes,
    })
}

impl BlockCover {
    pub fn total_volume(&self) -> f64 {
        self.classes
            .iter()
            .flat_map(|c| c.blocks.iter())
            .map(HalfOpenBox::volume)
            .sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.classes.iter().map(|c| c.blocks.len()).sum()
    }

    /// Smallest `ℓ∞` distance between distinct blocks of the same class, or
    /// `∞` if every class has at most one block.
    pub fn min_within_class_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for class in &self.classes {
            for i in 0..class.blocks.len() {
                for j in (i + 1)..class.blocks.len() {
                    best = best.min(class.blocks[i].linf_distance(&class.blocks[j]));
                }
            }
        }
        best
    }
}

/// Cantor-type partition of `(0, A]`: `levels` rounds of removing the central
/// `δ` fraction of every axis of every outer box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantorPartition {
    pub edges: Vec<f64>,
    pub delta: f64,
    pub levels: u32,
    /// The `2^{N·levels}` outer boxes that survive all removals.
    pub outer: Vec<HalfOpenBox>,
    /// Volume removed at each refinement step `1..=levels`.
    pub residual_volume_by_level: Vec<f64>,
}

/// Builds the Cantor partition. Each refinement replaces an axis interval
/// `(lo, hi]` of length `L` by `(lo, lo + (1-δ)L/2]` and `(hi - (1-δ)L/2, hi]`,
/// so after `l` levels the outer volume is `(1-δ)^{N·l} · Π_k A_k`.
///
/// Requires `δ ∈ (0, 1/2]` and `levels ≥ 1`.
pub fn cantor_partition(a: &[f64], delta: f64, levels: u32) -> Result<CantorPartition> {
    if a.is_empty() {
        return Err(Error::invalid("a", "at least one axis required"));
    }
    if a.iter().any(|&ak| !(ak > 0.0)) {
        return Err(Error::invalid("a", format!("edges must be positive, got {a:?}")));
    }
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::invalid(
            "delta",
            format!("removal fraction must lie in (0, 1/2], got {delta}"),
        ));
    }
    if levels == 0 {
        return Err(Error::invalid("levels", "at least one refinement required"));
    }
    let dim = a.len();
    let keep = (1.0 - delta) / 2.0;
    let mut outer = vec![HalfOpenBox::new(a.iter().map(|&ak| [0.0, ak]).collect())];
    let mut residual = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let before: f64 = outer.iter().map(HalfOpenBox::volume).sum();
        let mut next = Vec::with_capacity(outer.len() << dim);
        for bx in &outer {
            // Children along each axis: lower and upper kept thirds.
            let children_per_axis: Vec<[[f64; 2]; 2]> = bx
                .bounds
                .iter()
                .map(|&[lo, hi]| {
                    let l = hi - lo;
                    [[lo, lo + keep * l], [hi - keep * l, hi]]
                })
                .collect();
            for mask in 0u32..(1 << dim) {
                next.push(HalfOpenBox::new(
                    (0..dim)
                        .map(|k| children_per_axis[k][((mask >> k) & 1) as usize])
                        .collect(),
                ));
            }
        }
        let after: f64 = next.iter().map(HalfOpenBox::volume).sum();
        residual.push(before - after);
        outer = next;
    }
    Ok(CantorPartition {
        edges: a.to_vec(),
        delta,
        levels,
        outer,
        residual_volume_by_level: residual,
    })
}

impl CantorPartition {
    pub fn outer_volume(&self) -> f64 {
        self.outer.iter().map(HalfOpenBox::volume).sum()
    }

    /// Closed-form outer volume `(1-δ)^{N·levels} · Π_k A_k`.
    pub fn expected_outer_volume(&self) -> f64 {
        let total: f64 = self.edges.iter().product();
        (1.0 - self.delta).powi((self.edges.len() as u32 * self.levels) as i32) * total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sites_enumerates_lexicographically() {
        let cube = LatticeCube::new(vec![2, 3]).unwrap();
        let sites: Vec<Vec<i64>> = cube.sites().collect();
        assert_eq!(
            sites,
            vec![
                vec![1, 1],
                vec![1, 2],
                vec![1, 3],
                vec![2, 1],
                vec![2, 2],
                vec![2, 3]
            ]
        );
        assert_eq!(cube.num_sites(), 6);
    }

    #[test]
    fn singleton_cube_has_one_site() {
        let cube = LatticeCube::new(vec![1]).unwrap();
        assert_eq!(cube.sites().collect::<Vec<_>>(), vec![vec![1]]);
    }

    #[test]
    fn zero_edge_is_rejected() {
        assert!(LatticeCube::new(vec![4, 0]).is_err());
        assert!(LatticeCube::new(vec![]).is_err());
    }

    #[test]
    fn rank_round_trips() {
        let cube = LatticeCube::new(vec![3, 4, 5]).unwrap();
        for rank in 0..cube.num_sites() {
            let coords = cube.coords_of_rank(rank);
            assert_eq!(cube.rank_of_coords(&coords), Some(rank));
        }
    }

    #[test]
    fn effective_sample_size_examples() {
        // |I_n| = 64, N=2 -> 8; N=3 cube 4x4x4 -> 4; N=1 line of 17 -> 17.
        assert!((LatticeCube::new(vec![8, 8]).unwrap().effective_sample_size() - 8.0).abs() < 1e-12);
        assert!(
            (LatticeCube::new(vec![4, 4, 4]).unwrap().effective_sample_size() - 4.0).abs() < 1e-12
        );
        assert!((LatticeCube::new(vec![17]).unwrap().effective_sample_size() - 17.0).abs() < 1e-12);
    }

    #[test]
    fn aspect_ratio_certificates() {
        let ok = check_aspect_ratio(&LatticeCube::new(vec![10, 12]).unwrap(), 0.5).unwrap();
        assert!(ok.satisfied);
        let bad = check_aspect_ratio(&LatticeCube::new(vec![4, 100]).unwrap(), 0.5).unwrap();
        assert!(!bad.satisfied);
        // Equal edges pass with the strictest constant.
        let eq = check_aspect_ratio(&LatticeCube::new(vec![7, 7, 7]).unwrap(), 1.0).unwrap();
        assert!(eq.satisfied);
        assert!(check_aspect_ratio(&LatticeCube::new(vec![3]).unwrap(), 0.0).is_err());
        assert!(check_aspect_ratio(&LatticeCube::new(vec![3]).unwrap(), 1.5).is_err());
    }

    #[test]
    fn site_cell_convention() {
        let cube = LatticeCube::new(vec![4]).unwrap();
        let cell = cube.site_cell(&[2]).unwrap();
        assert_eq!(cell.bounds, vec![[1.0, 2.0]]);
        assert_eq!(cube.site_of_point(&[1.5]), Some(vec![2]));
        assert_eq!(cube.site_of_point(&[2.0]), Some(vec![2]));
        assert_eq!(cube.site_of_point(&[0.0]), None);
    }

    #[test]
    fn block_cover_line_example() {
        // A = 8, P = 2: even class {(0,2], (4,6]}, odd class {(2,4], (6,8]}.
        let cover = block_cover(&[8.0], &[2.0]).unwrap();
        assert_eq!(cover.classes.len(), 2);
        let even = &cover.classes[0];
        assert_eq!(
            even.blocks.iter().map(|b| b.bounds[0]).collect::<Vec<_>>(),
            vec![[0.0, 2.0], [4.0, 6.0]]
        );
        let odd = &cover.classes[1];
        assert_eq!(
            odd.blocks.iter().map(|b| b.bounds[0]).collect::<Vec<_>>(),
            vec![[2.0, 4.0], [6.0, 8.0]]
        );
        assert!((cover.total_volume() - 8.0).abs() < 1e-12);
        assert!((cover.min_within_class_separation() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn block_cover_plane_volume_by_enumeration() {
        // Independent oracle: accumulate block volumes one by one and compare
        // with the full area 8 * 8 = 64.
        let cover = block_cover(&[8.0, 8.0], &[2.0, 2.0]).unwrap();
        assert_eq!(cover.classes.len(), 4);
        let mut acc = 0.0;
        for class in &cover.classes {
            for b in &class.blocks {
                acc += (b.bounds[0][1] - b.bounds[0][0]) * (b.bounds[1][1] - b.bounds[1][0]);
            }
        }
        assert!((acc - 64.0).abs() < 1e-12);
        assert_eq!(cover.num_blocks(), 16);
    }

    #[test]
    fn block_cover_rejects_oversized_blocks() {
        // P > A/2 violates the two-blocks-per-axis precondition.
        assert!(block_cover(&[8.0], &[5.0]).is_err());
        assert!(block_cover(&[8.0], &[0.0]).is_err());
        assert!(block_cover(&[8.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn block_cover_clips_ragged_edges() {
        // A = 5, P = 2 : intervals (0,2],(2,4],(4,5] — still a tiling.
        let cover = block_cover(&[5.0], &[2.0]).unwrap();
        assert!((cover.total_volume() - 5.0).abs() < 1e-12);
        assert!(cover.min_within_class_separation() >= 2.0 - 1e-12);
    }

    #[test]
    fn default_block_edges_follow_the_power_rule() {
        let p = default_block_edges(&[64.0, 64.0]);
        // N = 2: P = A^{2/3} = 16.
        assert!((p[0] - 16.0).abs() < 1e-9);
    }

    #[test]
    fn cantor_level_one_half_removal() {
        // A = 1, δ = 1/2, one level: outer intervals (0, 1/4] and (3/4, 1].
        let part = cantor_partition(&[1.0], 0.5, 1).unwrap();
        assert_eq!(part.outer.len(), 2);
        assert_eq!(part.outer[0].bounds, vec![[0.0, 0.25]]);
        assert_eq!(part.outer[1].bounds, vec![[0.75, 1.0]]);
        assert!((part.outer_volume() - 0.5).abs() < 1e-12);
        assert!((part.residual_volume_by_level[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cantor_two_levels_recursion_oracle() {
        // Independent oracle: apply the one-axis refinement recursion by hand.
        // δ = 1/3, two levels: 4 intervals of length ((1-δ)/2)^2 = 1/9.
        let part = cantor_partition(&[1.0], 1.0 / 3.0, 2).unwrap();
        assert_eq!(part.outer.len(), 4);
        let keep = (1.0 - 1.0 / 3.0) / 2.0;
        let mut oracle = vec![[0.0, 1.0f64]];
        for _ in 0..2 {
            let mut next = Vec::new();
            for [lo, hi] in oracle {
                let l = hi - lo;
                next.push([lo, lo + keep * l]);
                next.push([hi - keep * l, hi]);
            }
            next.sort_by(|x, y| x[0].partial_cmp(&y[0]).unwrap());
            oracle = next;
        }
        let mut got: Vec<[f64; 2]> = part.outer.iter().map(|b| b.bounds[0]).collect();
        got.sort_by(|x, y| x[0].partial_cmp(&y[0]).unwrap());
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g[0] - o[0]).abs() < 1e-12 && (g[1] - o[1]).abs() < 1e-12);
        }
        for b in &part.outer {
            assert!((b.volume() - 1.0 / 9.0).abs() < 1e-12);
        }
        assert!((part.outer_volume() - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn cantor_rejects_bad_delta() {
        assert!(cantor_partition(&[1.0], 0.0, 1).is_err());
        assert!(cantor_partition(&[1.0], 0.6, 1).is_err());
        assert!(cantor_partition(&[1.0], 0.3, 0).is_err());
    }

    #[test]
    fn cantor_plane_counts_and_volume() {
        let part = cantor_partition(&[2.0, 3.0], 0.4, 2).unwrap();
        assert_eq!(part.outer.len(), 16); // (2^2)^2
        assert!((part.outer_volume() - part.expected_outer_volume()).abs() < 1e-12);
        // Removed + remaining = total.
        let removed: f64 = part.residual_volume_by_level.iter().sum();
        assert!((removed + part.outer_volume() - 6.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Tiling identity and in-class separation for random covers.
        #[test]
        fn block_cover_tiles_and_separates(
            dim in 1usize..=3,
            seed in 0u64..1_000_000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(3.0..20.0)).collect();
            let p: Vec<f64> = a.iter().map(|&ak| rng.gen_range(0.25..=ak / 2.0)).collect();
            let cover = block_cover(&a, &p).unwrap();
            let total: f64 = a.iter().product();
            prop_assert!((cover.total_volume() - total).abs() < 1e-10 * total.max(1.0));
            let min_p = p.iter().cloned().fold(f64::INFINITY, f64::min);
            let sep = cover.min_within_class_separation();
            prop_assert!(sep >= min_p * (1.0 - 1e-12) - 1e-12);
            // Blocks across all classes are pairwise disjoint.
            let all: Vec<&HalfOpenBox> =
                cover.classes.iter().flat_map(|c| c.blocks.iter()).collect();
            for i in 0..all.len() {
                for j in (i + 1)..all.len() {
                    prop_assert!(!all[i].overlaps(all[j]));
                }
            }
        }

        /// Outer volume identity and nesting for random Cantor partitions.
        #[test]
        fn cantor_volumes_and_nesting(
            dim in 1usize..=2,
            delta in 0.05f64..=0.5,
            levels in 1u32..=3,
            seed in 0u64..1_000_000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..8.0)).collect();
            let part = cantor_partition(&a, delta, levels).unwrap();
            let total: f64 = a.iter().product();
            prop_assert!(
                (part.outer_volume() - part.expected_outer_volume()).abs()
                    < 1e-10 * total.max(1.0)
            );
            let removed: f64 = part.residual_volume_by_level.iter().sum();
            prop_assert!((removed + part.outer_volume() - total).abs() < 1e-10 * total.max(1.0));
            // Refining once more nests: every deeper box sits inside some
            // current box.
            if levels < 3 {
                let finer = cantor_partition(&a, delta, levels + 1).unwrap();
                for small in &finer.outer {
                    prop_assert!(part.outer.iter().any(|big| small.subset_of(big, 1e-12)));
                }
            }
        }
    }
}

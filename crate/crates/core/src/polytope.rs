//! Convex inner approximation of a verified region and the constraint
//! geometry used by the projected flow.
//!
//! The polytope is an axis-aligned box `g(k) = G k + h ≥ 0` with rows ordered
//! `(+e₁, −e₁, +e₂, −e₂, …)`, i.e. `g₂ᵢ₋₁ = kᵢ − loᵢ` and `g₂ᵢ = hiᵢ − kᵢ`.
//! Finding the largest convex set inside a union of cubes is hard in general,
//! so [`inscribe_polytope`] grows a box greedily over the grid instead.

use std::collections::BTreeSet;

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{self, Mat};
use crate::region::{GridCoord, VerifiedRegion};

/// Faces are pulled inside the verified union by this fraction of the edge.
pub const SHRINK_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolytopeError {
    #[error("verified region is empty")]
    EmptyRegion,
    #[error("point violates the polytope (min g = {min_g:.3e})")]
    InfeasiblePoint { min_g: f64 },
    #[error("F is numerically singular at this point (lambda_min = {lambda_min:.3e})")]
    DegenerateF { lambda_min: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// `{k : G k + h ≥ 0}`. A polytope with no rows is the whole space and is
/// used for unconstrained comparison runs.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPolytope {
    pub g: Mat,
    pub h: Vec<f64>,
    pub chebyshev_center: Vec<f64>,
}

impl GainPolytope {
    /// Box `lo ≤ k ≤ hi` in the fixed face ordering.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Self {
        let d = lo.len();
        let mut g = Mat::zeros(2 * d, d);
        let mut h = vec![0.0; 2 * d];
        for i in 0..d {
            g[(2 * i, i)] = 1.0;
            h[2 * i] = -lo[i];
            g[(2 * i + 1, i)] = -1.0;
            h[2 * i + 1] = hi[i];
        }
        let chebyshev_center = lo.iter().zip(hi).map(|(l, u)| 0.5 * (l + u)).collect();
        Self { g, h, chebyshev_center }
    }

    pub fn unconstrained(dim: usize) -> Self {
        Self { g: Mat::zeros(0, dim), h: Vec::new(), chebyshev_center: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.g.nrows()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.g.nrows() == 0
    }

    /// `(lo, hi)` when the rows are exactly the box ordering.
    pub fn box_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        if self.g.nrows() != 2 * d {
            return None;
        }
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                let want_up = if i == j { 1.0 } else { 0.0 };
                if self.g[(2 * i, j)] != want_up || self.g[(2 * i + 1, j)] != -want_up {
                    return None;
                }
            }
            lo[i] = -self.h[2 * i];
            hi[i] = self.h[2 * i + 1];
        }
        Some((lo, hi))
    }

    pub fn values(&self, k: &[f64]) -> Vec<f64> {
        let gk = &self.g * DVector::from_column_slice(k);
        gk.iter().zip(&self.h).map(|(a, b)| a + b).collect()
    }

    pub fn min_g(&self, k: &[f64]) -> f64 {
        self.values(k).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Vertices of a box polytope (empty for general polytopes).
    pub fn box_vertices(&self) -> Vec<Vec<f64>> {
        let Some((lo, hi)) = self.box_bounds() else { return Vec::new() };
        let d = lo.len();
        (0..1usize << d)
            .map(|mask| (0..d).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValues {
    pub g: Vec<f64>,
    pub active_set: Vec<usize>,
}

/// Constraint values at `k` and the indices within `1e-9·(1 + ‖h‖_∞)` of zero.
pub fn constraints_at(polytope: &GainPolytope, k: &[f64]) -> ConstraintValues {
    let g = polytope.values(k);
    let h_inf = polytope.h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * (1.0 + h_inf);
    let active_set = g.iter().enumerate().filter(|(_, v)| v.abs() <= tol).map(|(i, _)| i).collect();
    ConstraintValues { g, active_set }
}

/// `F = 2 diag(g) + G Gᵀ` and `M = I − Gᵀ F⁻¹ G` at a feasible point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    pub point: Vec<f64>,
    pub m_matrix: Mat,
    pub f_matrix: Mat,
}

impl ProjectionOperator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (&self.m_matrix * DVector::from_column_slice(v)).iter().copied().collect()
    }
}

pub fn projection_operator(polytope: &GainPolytope, k: &[f64]) -> Result<ProjectionOperator, PolytopeError> {
    let d = polytope.dim();
    if k.len() != d {
        return Err(PolytopeError::DimensionMismatch(format!("point has {} entries, expected {d}", k.len())));
    }
    if polytope.is_unconstrained() {
        return Ok(ProjectionOperator { point: k.to_vec(), m_matrix: Mat::identity(d, d), f_matrix: Mat::zeros(0, 0) });
    }
    let g = polytope.values(k);
    let min_g = g.iter().copied().fold(f64::INFINITY, f64::min);
    if min_g < -1e-9 {
        return Err(PolytopeError::InfeasiblePoint { min_g });
    }
    let jac = &polytope.g;
    let mut f = jac * jac.transpose();
    for (i, gi) in g.iter().enumerate() {
        f[(i, i)] += 2.0 * gi;
    }
    let f = linalg::symmetrize(&f);
    let lambda_min = linalg::sym_min_eigenvalue(&f);
    if lambda_min < 1e-12 {
        return Err(PolytopeError::DegenerateF { lambda_min });
    }
    let l = f.nrows();
    let f_inv_g = match f.clone().cholesky() {
        Some(ch) => ch.solve(jac),
        None => (&f + Mat::identity(l, l) * 1e-12)
            .cholesky()
            .map(|ch| ch.solve(jac))
            .ok_or(PolytopeError::DegenerateF { lambda_min })?,
    };
    let m = linalg::symmetrize(&(Mat::identity(d, d) - jac.transpose() * f_inv_g));
    Ok(ProjectionOperator { point: k.to_vec(), m_matrix: m, f_matrix: f })
}

/// Integer box `lo..=hi` of grid cells.
#[derive(Debug, Clone, PartialEq, Eq)]
struct CellBox {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl CellBox {
    fn cells(&self) -> Vec<GridCoord> {
        let mut out = vec![Vec::new()];
        for (l, h) in self.lo.iter().zip(&self.hi) {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (*l..=*h).map(move |v| {
                        let mut c = prefix.clone();
                        c.push(v);
                        c
                    })
                })
                .collect();
        }
        out
    }

    /// Cells added by moving face `face` one step outward.
    fn slab(&self, face: usize) -> CellBox {
        let axis = face / 2;
        let mut slab = self.clone();
        if face.is_multiple_of(2) {
            slab.hi[axis] = self.lo[axis] - 1;
            slab.lo[axis] = self.lo[axis] - 1;
        } else {
            slab.lo[axis] = self.hi[axis] + 1;
            slab.hi[axis] = self.hi[axis] + 1;
        }
        slab
    }

    fn extend(&mut self, face: usize) {
        let axis = face / 2;
        if face.is_multiple_of(2) {
            self.lo[axis] -= 1;
        } else {
            self.hi[axis] += 1;
        }
    }

    fn volume(&self) -> i64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l + 1).product()
    }
}

/// Whether every grid cell of the integer box is a verified cube.
fn covered(cells: &BTreeSet<GridCoord>, b: &CellBox) -> bool {
    b.cells().iter().all(|c| cells.contains(c))
}

fn grow(cells: &BTreeSet<GridCoord>, start: &GridCoord, first_face: usize) -> CellBox {
    let d = start.len();
    let faces = 2 * d;
    let mut b = CellBox { lo: start.clone(), hi: start.clone() };
    loop {
        let mut progressed = false;
        for step in 0..faces {
            let face = (first_face + step) % faces;
            if covered(cells, &b.slab(face)) {
                b.extend(face);
                progressed = true;
            }
        }
        if !progressed {
            return b;
        }
    }
}

/// Grows an axis-aligned box inside the union of verified cubes.
///
/// Starts from the cube whose center has the lowest `score` and extends faces
/// one grid step at a time, round-robin, as long as the added slab consists of
/// verified cubes. One candidate is grown per starting face; the candidate
/// whose center scores lowest wins (ties go to the larger box). The winner is
/// shrunk by `SHRINK_FRACTION·edge` per face so it lies strictly inside the union.
pub fn inscribe_polytope<F>(region: &VerifiedRegion, score: F) -> Result<GainPolytope, PolytopeError>
where
    F: Fn(&[f64]) -> f64,
{
    if region.cubes.is_empty() {
        return Err(PolytopeError::EmptyRegion);
    }
    let cells = region.coords();
    let start = region
        .cubes
        .iter()
        .map(|c| (score(&c.cube.center), &c.coord))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, c)| c.clone())
        .expect("region is nonempty");

    let d = region.dim();
    let delta = SHRINK_FRACTION * region.edge;
    let to_bounds = |b: &CellBox| -> (Vec<f64>, Vec<f64>) {
        let lo = (0..d).map(|i| region.grid_anchor[i] + (b.lo[i] as f64 - 0.5) * region.edge + delta).collect();
        let hi = (0..d).map(|i| region.grid_anchor[i] + (b.hi[i] as f64 + 0.5) * region.edge - delta).collect();
        (lo, hi)
    };

    let mut best: Option<(f64, i64, GainPolytope)> = None;
    for first_face in 0..2 * d {
        let b = grow(&cells, &start, first_face);
        let (lo, hi) = to_bounds(&b);
        let poly = GainPolytope::from_box(&lo, &hi);
        let s = score(&poly.chebyshev_center);
        let s = if s.is_nan() { f64::INFINITY } else { s };
        let better = match &best {
            None => true,
            Some((bs, bv, _)) => s < *bs || (s == *bs && b.volume() > *bv),
        };
        if better {
            best = Some((s, b.volume(), poly));
        }
    }
    Ok(best.expect("at least one candidate").2)
}

/// Exact check that the box `[lo, hi]` lies in the union of the region's cubes.
///
/// Every grid cell the box touches must be verified.
pub fn box_covered_by(region: &VerifiedRegion, lo: &[f64], hi: &[f64]) -> bool {
    let d = region.dim();
    if lo.len() != d || hi.len() != d {
        return false;
    }
    let to_cell = |x: f64, i: usize| ((x - region.grid_anchor[i]) / region.edge + 0.5).floor() as i64;
    let mut b = CellBox { lo: vec![0; d], hi: vec![0; d] };
    for i in 0..d {
        b.lo[i] = to_cell(lo[i], i);
        // a point exactly on a cell face belongs to the lower cell too
        let up = (hi[i] - region.grid_anchor[i]) / region.edge + 0.5;
        b.hi[i] = if up == up.floor() { up as i64 - 1 } else { up.floor() as i64 };
        if b.hi[i] < b.lo[i] {
            b.hi[i] = b.lo[i];
        }
    }
    covered(&region.coords(), &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{GainCube, RegionCell};

    fn unit_box() -> GainPolytope {
        GainPolytope::from_box(&[0.0, 0.0], &[1.0, 1.0])
    }

    /// Independent evaluation of `I − Gᵀ(2 diag g + GGᵀ)⁻¹G` for a 2D box using
    /// plain arrays and Cramer-style block inversion per axis.
    fn box_projection_by_hand(lo: [f64; 2], hi: [f64; 2], k: [f64; 2]) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for axis in 0..2 {
            let g1 = k[axis] - lo[axis];
            let g2 = hi[axis] - k[axis];
            // per-axis F block [[2g1 + 1, -1], [-1, 2g2 + 1]]
            let (a, b, c) = (2.0 * g1 + 1.0, -1.0, 2.0 * g2 + 1.0);
            let det = a * c - b * b;
            let inv = [[c / det, -b / det], [-b / det, a / det]];
            // Gᵀ F⁻¹ G for rows (+1, −1)
            let q = inv[0][0] - inv[0][1] - inv[1][0] + inv[1][1];
            m[axis][axis] = 1.0 - q;
        }
        m
    }

    #[test]
    fn constraint_examples() {
        let p = unit_box();
        let c = constraints_at(&p, &[0.5, 0.5]);
        assert_eq!(c.g, vec![0.5, 0.5, 0.5, 0.5]);
        assert!(c.active_set.is_empty());
        let c = constraints_at(&p, &[0.0, 0.5]);
        assert_eq!(c.g[0], 0.0);
        assert_eq!(c.active_set, vec![0]);
        let c = constraints_at(&p, &[-0.1, 0.5]);
        assert!((c.g[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn projection_at_unit_box_center() {
        let op = projection_operator(&unit_box(), &[0.5, 0.5]).unwrap();
        let hand = box_projection_by_hand([0.0, 0.0], [1.0, 1.0], [0.5, 0.5]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((op.m_matrix[(i, j)] - hand[i][j]).abs() < 1e-12);
            }
        }
        assert!((op.m_matrix.clone() - Mat::identity(2, 2) / 3.0).amax() < 1e-12);
    }

    #[test]
    fn single_active_constraint_is_exact_tangent_projector() {
        let poly = GainPolytope { g: Mat::from_row_slice(1, 2, &[1.0, 0.0]), h: vec![0.0], chebyshev_center: vec![1.0, 0.0] };
        let op = projection_operator(&poly, &[0.0, 0.7]).unwrap();
        assert!((op.f_matrix[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((op.m_matrix - Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn deep_interior_is_nearly_identity() {
        let poly = GainPolytope::from_box(&[0.0, 0.0], &[100.0, 100.0]);
        let op = projection_operator(&poly, &[50.0, 50.0]).unwrap();
        let hand = box_projection_by_hand([0.0, 0.0], [100.0, 100.0], [50.0, 50.0]);
        assert!((op.m_matrix[(0, 0)] - hand[0][0]).abs() < 1e-12);
        assert!((op.m_matrix[(0, 0)] - (1.0 - 200.0 / 10200.0)).abs() < 1e-12);
        assert!(op.m_matrix[(0, 1)].abs() < 1e-15);
        // deviation from I decays like 1/(2g)
        let far = GainPolytope::from_box(&[0.0, 0.0], &[1e4, 1e4]);
        let op = projection_operator(&far, &[5e3, 5e3]).unwrap();
        assert!((op.m_matrix - Mat::identity(2, 2)).amax() < 1e-3);
    }

    #[test]
    fn infeasible_point_rejected() {
        assert!(matches!(projection_operator(&unit_box(), &[-0.1, 0.5]), Err(PolytopeError::InfeasiblePoint { .. })));
    }

    #[test]
    fn box_bounds_round_trip() {
        let p = GainPolytope::from_box(&[-1.0, 2.0], &[0.5, 3.0]);
        assert_eq!(p.box_bounds(), Some((vec![-1.0, 2.0], vec![0.5, 3.0])));
        assert_eq!(p.chebyshev_center, vec![-0.25, 2.5]);
        assert_eq!(p.box_vertices().len(), 4);
    }

    fn region_of(coords: &[[i64; 2]], edge: f64) -> VerifiedRegion {
        let mut cubes: Vec<RegionCell> = coords
            .iter()
            .map(|c| RegionCell {
                coord: c.to_vec(),
                cube: GainCube::new(vec![c[0] as f64 * edge, c[1] as f64 * edge], edge),
            })
            .collect();
        cubes.sort_by(|a, b| a.coord.cmp(&b.coord));
        VerifiedRegion { cubes, grid_anchor: vec![0.0, 0.0], edge, rejected: Vec::new() }
    }

    #[test]
    fn single_cube_region() {
        let region = region_of(&[[0, 0]], 0.4);
        let poly = inscribe_polytope(&region, |_| 0.0).unwrap();
        let (lo, hi) = poly.box_bounds().unwrap();
        let delta = 1e-6 * 0.4;
        assert!((lo[0] - (-0.2 + delta)).abs() < 1e-15 && (hi[1] - (0.2 - delta)).abs() < 1e-15);
    }

    #[test]
    fn two_adjacent_cubes() {
        let region = region_of(&[[0, 0], [1, 0]], 1.0);
        let poly = inscribe_polytope(&region, |_| 0.0).unwrap();
        let (lo, hi) = poly.box_bounds().unwrap();
        assert!((lo[0] + 0.5).abs() < 1e-5 && (hi[0] - 1.5).abs() < 1e-5);
        assert!((lo[1] + 0.5).abs() < 1e-5 && (hi[1] - 0.5).abs() < 1e-5);
        assert!(box_covered_by(&region, &lo, &hi));
    }

    #[test]
    fn l_shaped_region_stays_inside() {
        let region = region_of(&[[0, 0], [1, 0], [0, 1]], 1.0);
        let poly = inscribe_polytope(&region, |k| k[0] + k[1]).unwrap();
        let (lo, hi) = poly.box_bounds().unwrap();
        assert!(box_covered_by(&region, &lo, &hi));
        for v in poly.box_vertices() {
            assert!(region.covers(&v));
        }
        assert!(!box_covered_by(&region, &[-0.5, -0.5], &[1.5, 1.5]));
    }

    #[test]
    fn empty_region() {
        let region = region_of(&[], 1.0);
        assert_eq!(inscribe_polytope(&region, |_| 0.0), Err(PolytopeError::EmptyRegion));
    }
}

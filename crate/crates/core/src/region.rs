//! Inner approximation of the passivating-gain set by a union of verified
//! hypercubes.
//!
//! A cube is verified when one storage matrix certifies all of its vertices;
//! because the KYP constraint is affine in `K`, that storage matrix then
//! certifies every gain in the cube. [`explore`] grows a connected union of
//! such cubes by breadth-first flood fill over an axis-aligned grid anchored
//! at a passivating seed gain.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat};
use crate::passivity::{self, CertifyOptions, PassivityCertificate, PassivityError, PassivityMode};
use crate::plant::LtiPlant;

/// Integer cell index; cell `c` is centered at `anchor + c·edge`.
pub type GridCoord = Vec<i64>;

/// Gain-space dimension above which cube vertices are not enumerated (`2^8 = 256`).
pub const MAX_CUBE_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("cube edge must be positive, got {0}")]
    InvalidEdge(f64),
    #[error("gain dimension {dim} gives more than 2^{max} cube vertices", max = MAX_CUBE_DIM)]
    TooManyVertices { dim: usize },
    #[error("cube rejected (best normalized lambda_max {best_lambda_max:.3e})")]
    Rejected { best_lambda_max: f64 },
    #[error("seed gain is not passivating (best normalized lambda_max {best_lambda_max:.3e})")]
    SeedNotPassivating { best_lambda_max: f64 },
    #[error("seed cube could not be verified; per-vertex best lambda_max: {vertices:?}")]
    EmptyRegion { vertices: Vec<(Vec<f64>, Option<f64>)> },
    #[error("invalid exploration config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Passivity(#[from] PassivityError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Axis-aligned cube in vectorized gain space.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCube {
    pub center: Vec<f64>,
    pub edge: f64,
    pub certificate: Option<PassivityCertificate>,
}

impl GainCube {
    pub fn new(center: Vec<f64>, edge: f64) -> Self {
        Self { center, edge, certificate: None }
    }

    /// All `2^d` vertices, bit `i` of the index choosing the upper side of axis `i`.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let d = self.center.len();
        let half = 0.5 * self.edge;
        (0..1usize << d)
            .map(|mask| {
                self.center
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if mask >> i & 1 == 1 { c + half } else { c - half })
                    .collect()
            })
            .collect()
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        let half = 0.5 * self.edge;
        k.iter().zip(&self.center).all(|(v, c)| (v - c).abs() <= half)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionCell {
    pub coord: GridCoord,
    pub cube: GainCube,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedCube {
    pub coord: GridCoord,
    pub center: Vec<f64>,
    pub best_lambda_max: f64,
}

/// Union of verified cubes on one grid, sorted by grid coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedRegion {
    pub cubes: Vec<RegionCell>,
    pub grid_anchor: Vec<f64>,
    pub edge: f64,
    pub rejected: Vec<RejectedCube>,
}

impl VerifiedRegion {
    pub fn dim(&self) -> usize {
        self.grid_anchor.len()
    }

    pub fn center_of(&self, coord: &[i64]) -> Vec<f64> {
        cell_center(&self.grid_anchor, self.edge, coord)
    }

    pub fn coords(&self) -> BTreeSet<GridCoord> {
        self.cubes.iter().map(|c| c.coord.clone()).collect()
    }

    pub fn contains_coord(&self, coord: &[i64]) -> bool {
        self.cubes.binary_search_by(|c| c.coord.as_slice().cmp(coord)).is_ok()
    }

    /// Whether a gain lies in some verified cube.
    pub fn covers(&self, k: &[f64]) -> bool {
        self.cubes.iter().any(|c| c.cube.contains(k))
    }

    /// Face-adjacency connectivity of the verified cubes.
    pub fn is_connected(&self) -> bool {
        let Some(first) = self.cubes.first() else { return true };
        let all = self.coords();
        let mut seen = BTreeSet::from([first.coord.clone()]);
        let mut stack = vec![first.coord.clone()];
        while let Some(c) = stack.pop() {
            for nb in face_neighbors(&c) {
                if all.contains(&nb) && seen.insert(nb.clone()) {
                    stack.push(nb);
                }
            }
        }
        seen.len() == all.len()
    }
}

fn cell_center(anchor: &[f64], edge: f64, coord: &[i64]) -> Vec<f64> {
    anchor.iter().zip(coord).map(|(a, c)| a + *c as f64 * edge).collect()
}

pub fn face_neighbors(coord: &[i64]) -> Vec<GridCoord> {
    let mut out = Vec::with_capacity(2 * coord.len());
    for i in 0..coord.len() {
        for step in [1, -1] {
            let mut nb = coord.to_vec();
            nb[i] += step;
            out.push(nb);
        }
    }
    out
}

/// Per-cube engine seed derived from the run seed and the grid coordinate, so
/// results do not depend on evaluation order.
fn cell_seed(seed: u64, coord: &[i64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for c in coord {
        h = h.wrapping_add(*c as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Tries to certify all vertices of `cube` with one common storage matrix.
pub fn verify_cube(
    plant: &LtiPlant,
    cube: &GainCube,
    mode: &PassivityMode,
    opts: &CertifyOptions,
) -> Result<GainCube, RegionError> {
    if !(cube.edge > 0.0) {
        return Err(RegionError::InvalidEdge(cube.edge));
    }
    let dim = plant.gain_dim();
    if cube.center.len() != dim {
        return Err(RegionError::InvalidConfig(format!("cube center has {} entries, expected {dim}", cube.center.len())));
    }
    if dim > MAX_CUBE_DIM {
        return Err(RegionError::TooManyVertices { dim });
    }
    let gains: Vec<Mat> = cube.vertices().iter().map(|v| plant.gain_from_vec(v)).collect();
    match passivity::certify_common(plant, &gains, mode, opts) {
        Ok(cert) => Ok(GainCube { certificate: Some(cert), ..cube.clone() }),
        Err(PassivityError::Infeasible { best_lambda_max }) => Err(RegionError::Rejected { best_lambda_max }),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub seed_gain: Vec<f64>,
    pub edge: f64,
    pub max_cubes: usize,
    /// Per-axis `(lo, hi)` limits on cube centers; defaults to `seed ± 10·edge`.
    pub search_box: Option<Vec<(f64, f64)>>,
    pub certify: CertifyOptions,
    /// Worker count for cube verification; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl ExploreConfig {
    pub fn new(seed_gain: Vec<f64>, edge: f64) -> Self {
        Self { seed_gain, edge, max_cubes: 10_000, search_box: None, certify: CertifyOptions::default(), threads: None }
    }

    pub fn resolved_box(&self) -> Vec<(f64, f64)> {
        self.search_box
            .clone()
            .unwrap_or_else(|| self.seed_gain.iter().map(|s| (s - 10.0 * self.edge, s + 10.0 * self.edge)).collect())
    }
}

fn in_box(center: &[f64], bounds: &[(f64, f64)]) -> bool {
    let slack = 1e-12;
    center.iter().zip(bounds).all(|(c, (lo, hi))| *c >= lo - slack && *c <= hi + slack)
}

/// Breadth-first flood fill of verified cubes starting from the cube centered
/// at the seed gain.
///
/// Every face neighbor of a verified cube whose center lies in the search box
/// is tested once. Each BFS level is verified in parallel and merged in grid
/// coordinate order, so the result does not depend on the worker count.
pub fn explore(plant: &LtiPlant, mode: &PassivityMode, config: &ExploreConfig) -> Result<VerifiedRegion, RegionError> {
    let dim = plant.gain_dim();
    if !(config.edge > 0.0) {
        return Err(RegionError::InvalidEdge(config.edge));
    }
    if config.seed_gain.len() != dim {
        return Err(RegionError::InvalidConfig(format!("seed gain has {} entries, expected {dim}", config.seed_gain.len())));
    }
    if dim > MAX_CUBE_DIM {
        return Err(RegionError::TooManyVertices { dim });
    }
    let bounds = config.resolved_box();
    if bounds.len() != dim || bounds.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(RegionError::InvalidConfig("search box must be bounded with lo <= hi on every axis".into()));
    }
    if config.max_cubes == 0 {
        return Err(RegionError::InvalidConfig("max_cubes must be positive".into()));
    }
    let seed_k = plant.gain_from_vec(&config.seed_gain);
    if let Err(e) = passivity::certify_gain(plant, &seed_k, mode, &config.certify) {
        return Err(match e {
            PassivityError::Infeasible { best_lambda_max } => RegionError::SeedNotPassivating { best_lambda_max },
            other => other.into(),
        });
    }

    let pool = match config.threads {
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| RegionError::InvalidConfig(e.to_string()))?,
        ),
        None => None,
    };
    let anchor = config.seed_gain.clone();
    let verify_level = |level: &[GridCoord]| -> Vec<(GridCoord, Result<GainCube, RegionError>)> {
        let work = || {
            level
                .par_iter()
                .map(|coord| {
                    let cube = GainCube::new(cell_center(&anchor, config.edge, coord), config.edge);
                    let opts = CertifyOptions { seed: cell_seed(config.certify.seed, coord), ..config.certify.clone() };
                    (coord.clone(), verify_cube(plant, &cube, mode, &opts))
                })
                .collect()
        };
        match &pool {
            Some(p) => p.install(work),
            None => work(),
        }
    };

    let origin: GridCoord = vec![0; dim];
    let mut visited: BTreeSet<GridCoord> = BTreeSet::from([origin.clone()]);
    let mut verified: BTreeMap<GridCoord, GainCube> = BTreeMap::new();
    let mut rejected: Vec<RejectedCube> = Vec::new();
    let mut frontier = vec![origin];

    'levels: while !frontier.is_empty() {
        frontier.sort();
        let results = verify_level(&frontier);
        let mut next = BTreeSet::new();
        for (coord, outcome) in results {
            match outcome {
                Ok(cube) => {
                    if verified.len() >= config.max_cubes {
                        break 'levels;
                    }
                    for nb in face_neighbors(&coord) {
                        if !visited.contains(&nb) && in_box(&cell_center(&anchor, config.edge, &nb), &bounds) {
                            next.insert(nb);
                        }
                    }
                    verified.insert(coord, cube);
                }
                Err(RegionError::Rejected { best_lambda_max }) => {
                    rejected.push(RejectedCube {
                        center: cell_center(&anchor, config.edge, &coord),
                        coord,
                        best_lambda_max,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        visited.extend(next.iter().cloned());
        frontier = next.into_iter().collect();
        if verified.is_empty() {
            break;
        }
    }

    if verified.is_empty() {
        let cube = GainCube::new(anchor.clone(), config.edge);
        let vertices = cube
            .vertices()
            .into_iter()
            .map(|v| {
                let k = plant.gain_from_vec(&v);
                let verdict = match passivity::certify_gain(plant, &k, mode, &config.certify) {
                    Ok(c) => Some(c.lambda_max_constraint),
                    Err(PassivityError::Infeasible { best_lambda_max }) if best_lambda_max.is_finite() => Some(best_lambda_max),
                    Err(_) => None,
                };
                (v, verdict)
            })
            .collect();
        return Err(RegionError::EmptyRegion { vertices });
    }
    rejected.sort_by(|a, b| a.coord.cmp(&b.coord));
    Ok(VerifiedRegion {
        cubes: verified.into_iter().map(|(coord, cube)| RegionCell { coord, cube }).collect(),
        grid_anchor: anchor,
        edge: config.edge,
        rejected,
    })
}

/// Outcome of checking whether the unconstrained LQR optimum already passivates.
#[derive(Debug, Clone, PartialEq)]
pub enum Precheck {
    AlreadyPassive { k_star: Mat, certificate: PassivityCertificate },
    NeedsPipeline { k_star: Mat },
}

impl Precheck {
    pub fn k_star(&self) -> &Mat {
        match self {
            Precheck::AlreadyPassive { k_star, .. } | Precheck::NeedsPipeline { k_star } => k_star,
        }
    }
}

/// Computes `K*` from the CARE and tries to certify it.
pub fn precheck_optimal(plant: &LtiPlant, mode: &PassivityMode, opts: &CertifyOptions) -> Result<Precheck, RegionError> {
    let (_, k_star) = linalg::solve_care(&plant.a, &plant.b_u, &plant.q, &plant.r)?;
    match passivity::certify_gain(plant, &k_star, mode, opts) {
        Ok(certificate) => Ok(Precheck::AlreadyPassive { k_star, certificate }),
        Err(PassivityError::Infeasible { .. }) | Err(PassivityError::EqualityInconsistent { .. }) => {
            Ok(Precheck::NeedsPipeline { k_star })
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::benchmarks;

    #[test]
    fn vertices_enumerate_corners() {
        let cube = GainCube::new(vec![0.0, 1.0], 2.0);
        let v = cube.vertices();
        assert_eq!(v, vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 2.0], vec![1.0, 2.0]]);
        assert!(cube.contains(&[0.5, 1.5]));
        assert!(!cube.contains(&[1.5, 1.5]));
    }

    #[test]
    fn verify_interior_and_exterior_cubes() {
        let plant = benchmarks::coupled_two_state();
        let mode = PassivityMode::nonstrict();
        let opts = CertifyOptions::default();
        let ok = verify_cube(&plant, &GainCube::new(vec![-0.8, 0.4], 0.4), &mode, &opts).unwrap();
        assert!(ok.certificate.is_some());
        let err = verify_cube(&plant, &GainCube::new(vec![0.4, 0.4], 0.4), &mode, &opts).unwrap_err();
        assert!(matches!(err, RegionError::Rejected { .. }));
    }

    #[test]
    fn verify_rejects_bad_edge() {
        let plant = benchmarks::coupled_two_state();
        let err = verify_cube(&plant, &GainCube::new(vec![-0.8, 0.4], 0.0), &PassivityMode::nonstrict(), &CertifyOptions::default());
        assert_eq!(err, Err(RegionError::InvalidEdge(0.0)));
    }

    #[test]
    fn verify_too_many_vertices() {
        let n = 3;
        let m = 3;
        let plant = LtiPlant::new(
            -Mat::identity(n, n),
            Mat::identity(n, m),
            Mat::from_row_slice(n, 1, &[1.0, 0.0, 0.0]),
            Mat::from_row_slice(1, n, &[1.0, 0.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::identity(n, n),
            Mat::identity(m, m),
        )
        .unwrap();
        let err = verify_cube(&plant, &GainCube::new(vec![0.0; 9], 0.1), &PassivityMode::nonstrict(), &CertifyOptions::default());
        assert_eq!(err, Err(RegionError::TooManyVertices { dim: 9 }));
    }

    #[test]
    fn budget_of_one_returns_seed_cube() {
        let plant = benchmarks::coupled_two_state();
        let mut cfg = ExploreConfig::new(vec![-0.8, 0.4], 0.4);
        cfg.max_cubes = 1;
        let region = explore(&plant, &PassivityMode::nonstrict(), &cfg).unwrap();
        assert_eq!(region.cubes.len(), 1);
        assert_eq!(region.cubes[0].coord, vec![0, 0]);
        assert_eq!(region.cubes[0].cube.center, vec![-0.8, 0.4]);
    }

    #[test]
    fn non_passivating_seed() {
        let plant = benchmarks::coupled_two_state();
        let cfg = ExploreConfig::new(vec![0.5, 0.0], 0.4);
        assert!(matches!(explore(&plant, &PassivityMode::nonstrict(), &cfg), Err(RegionError::SeedNotPassivating { .. })));
    }

    #[test]
    fn seed_cube_rejected_gives_diagnostics() {
        let plant = benchmarks::coupled_two_state();
        // seed inside, but an edge-1 cube around it reaches K₁ = 0.4
        let cfg = ExploreConfig::new(vec![-0.1, 0.0], 1.0);
        match explore(&plant, &PassivityMode::nonstrict(), &cfg) {
            Err(RegionError::EmptyRegion { vertices }) => assert_eq!(vertices.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precheck_examples() {
        let mode = PassivityMode::nonstrict();
        let opts = CertifyOptions::default();
        match precheck_optimal(&benchmarks::coupled_two_state(), &mode, &opts).unwrap() {
            Precheck::NeedsPipeline { k_star } => assert!(k_star[(0, 0)] > 0.0),
            other => panic!("unexpected {other:?}"),
        }
        match precheck_optimal(&benchmarks::passive_open_loop(), &mode, &opts).unwrap() {
            Precheck::AlreadyPassive { k_star, certificate } => {
                assert!(k_star.amax() < 1e-14);
                assert!((certificate.p - Mat::identity(2, 2)).amax() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = benchmarks::coupled_two_state();
        bad.a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        bad.b_u = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(
            precheck_optimal(&bad, &mode, &opts),
            Err(RegionError::Linalg(LinalgError::NotStabilizable { .. }))
        ));
    }
}

//! KYP-based passivity certificates for closed-loop gains.
//!
//! For `u = −Kx` the closed loop `(A_K, B_d, C, D)` with `A_K = A − B_u K`
//! is (strictly) passive iff some `P ≻ 0` makes
//!
//! ```text
//! D ≠ 0:  M_K = [[A_KᵀP + PA_K, PB_d − Cᵀ], [B_dᵀP − C, −D − Dᵀ]] ⪯ 0   (≺ 0)
//! D = 0:  A_KᵀP + PA_K ⪯ 0 (≺ 0)  and  B_dᵀP = C
//! ```
//!
//! Searching for `P` is delegated to [`engine`]; whatever it returns is
//! re-validated from scratch by [`validate_storage`] before a
//! [`PassivityCertificate`] is handed out.

pub(crate) mod engine;

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat};
use crate::plant::{LtiPlant, PlantError};
use engine::{AffineSym, EngineSettings, LmiProblem};

/// Default lower bound on `λ_min(P)`.
pub const DEFAULT_EPS_P: f64 = 1e-8;
/// Tolerance on `‖B_dᵀP − C‖_F` in the `D = 0` case.
pub const EQUALITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    Strict,
    Nonstrict,
}

/// Strict or nonstrict passivity together with the numeric margins used to
/// decide it. Thresholds apply to constraint eigenvalues divided by
/// `1 + ‖A‖_F`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PassivityMode {
    pub kind: Strictness,
    pub strict_margin: f64,
    pub nonstrict_slack: f64,
}

impl PassivityMode {
    pub fn strict() -> Self {
        Self { kind: Strictness::Strict, strict_margin: 1e-6, nonstrict_slack: 1e-7 }
    }

    pub fn nonstrict() -> Self {
        Self { kind: Strictness::Nonstrict, strict_margin: 1e-6, nonstrict_slack: 1e-7 }
    }

    pub fn from_kind(kind: Strictness) -> Self {
        match kind {
            Strictness::Strict => Self::strict(),
            Strictness::Nonstrict => Self::nonstrict(),
        }
    }

    /// Largest admissible normalized constraint eigenvalue.
    pub fn threshold(&self) -> f64 {
        match self.kind {
            Strictness::Strict => -self.strict_margin,
            Strictness::Nonstrict => self.nonstrict_slack,
        }
    }

    fn is_valid(&self) -> bool {
        self.strict_margin > 0.0 && self.nonstrict_slack >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassivityCertificate {
    /// Storage matrix of `S(x) = ½ xᵀ P x`.
    pub p: Mat,
    pub mode: PassivityMode,
    /// Largest eigenvalue of the KYP constraint over all certified gains,
    /// divided by `1 + ‖A‖_F`.
    pub lambda_max_constraint: f64,
    pub lambda_min_p: f64,
    /// `‖B_dᵀP − C‖_F` when `D = 0`, else zero.
    pub equality_residual: f64,
    /// Some certified gain has `(A_K, B_d)` uncontrollable or `(A_K, C)`
    /// unobservable to within 1e-9, where the KYP equivalence is not guaranteed.
    pub port_degenerate: bool,
}

/// `(Z, W)` from the convexified feasibility problem, with `K = W Z⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePair {
    pub z: Mat,
    pub w: Mat,
    pub k: Mat,
    /// Certificate for `K` with `P = Z⁻¹`.
    pub certificate: PassivityCertificate,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassivityError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid passivity mode margins")]
    InvalidMode,
    #[error("gain list is empty")]
    EmptyGainList,
    /// Heuristic verdict: no certificate found within the iteration budget.
    #[error("no passivity certificate found (best normalized lambda_max {best_lambda_max:.3e})")]
    Infeasible { best_lambda_max: f64 },
    #[error("B_d^T P = C has no symmetric solution (residual {residual:.3e})")]
    EqualityInconsistent { residual: f64 },
}

/// Search budget for the certificate engine.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
    pub eps_p: f64,
    /// Stop early once the normalized `λ_max` reaches this value. Defaults to
    /// just below the mode threshold.
    pub target: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { restarts: 5, iterations: 2000, seed: 0, eps_p: DEFAULT_EPS_P, target: None }
    }
}

impl CertifyOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn settings(&self, mode: &PassivityMode) -> EngineSettings {
        let threshold = mode.threshold();
        let early = threshold - 0.1 * threshold.abs().max(1e-9);
        EngineSettings {
            restarts: self.restarts,
            iterations: self.iterations,
            tau_start: 1e-1,
            tau_end: 1e-4,
            seed: self.seed,
            target: self.target.map_or(early, |t| t.min(early)),
        }
    }
}

/// KYP constraint matrix for gain `K` and storage `P`.
///
/// Returns the full block `M_K` when `D ≠ 0` and only `A_KᵀP + PA_K` when
/// `D = 0`; in the latter case `B_dᵀP = C` is checked by [`equality_residual`].
pub fn kyp_block(plant: &LtiPlant, k: &Mat, p: &Mat) -> Result<Mat, PassivityError> {
    plant.check_gain_shape(k)?;
    let n = plant.n();
    if p.shape() != (n, n) {
        return Err(PlantError::DimensionMismatch(format!("P must be {n}x{n}")).into());
    }
    let a_k = plant.closed_loop(k);
    let lyap = linalg::symmetrize(&(a_k.transpose() * p + p * &a_k));
    if !plant.has_feedthrough() {
        return Ok(lyap);
    }
    let q = plant.p();
    let mut m = Mat::zeros(n + q, n + q);
    let off = p * &plant.b_d - plant.c.transpose();
    m.view_mut((0, 0), (n, n)).copy_from(&lyap);
    m.view_mut((0, n), (n, q)).copy_from(&off);
    m.view_mut((n, 0), (q, n)).copy_from(&off.transpose());
    m.view_mut((n, n), (q, q)).copy_from(&(-(&plant.d + plant.d.transpose())));
    Ok(m)
}

/// `‖B_dᵀP − C‖_F` for `D = 0`; zero when the plant has feedthrough.
pub fn equality_residual(plant: &LtiPlant, p: &Mat) -> f64 {
    if plant.has_feedthrough() {
        0.0
    } else {
        (plant.b_d.transpose() * p - &plant.c).norm()
    }
}

/// Measured quantities for a candidate storage matrix, without a verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageAssessment {
    pub lambda_max_constraint: f64,
    pub lambda_min_p: f64,
    pub equality_residual: f64,
}

pub fn assess_storage(plant: &LtiPlant, gains: &[Mat], p: &Mat) -> Result<StorageAssessment, PassivityError> {
    let p = linalg::symmetrize(p);
    let mut worst = f64::NEG_INFINITY;
    for k in gains {
        worst = worst.max(linalg::sym_max_eigenvalue(&kyp_block(plant, k, &p)?));
    }
    Ok(StorageAssessment {
        lambda_max_constraint: worst / plant.constraint_scale(),
        lambda_min_p: linalg::sym_min_eigenvalue(&p),
        equality_residual: equality_residual(plant, &p),
    })
}

/// Checks a given `P` against every gain and builds the certificate on success.
///
/// Fails with `Infeasible` carrying the measured normalized `λ_max`.
pub fn validate_storage(
    plant: &LtiPlant,
    gains: &[Mat],
    p: &Mat,
    mode: &PassivityMode,
    eps_p: f64,
) -> Result<PassivityCertificate, PassivityError> {
    if gains.is_empty() {
        return Err(PassivityError::EmptyGainList);
    }
    let s = assess_storage(plant, gains, p)?;
    let ok = s.lambda_min_p >= eps_p
        && s.lambda_max_constraint <= mode.threshold()
        && s.equality_residual <= EQUALITY_TOL;
    if !ok {
        let best_lambda_max = if s.lambda_min_p >= eps_p && s.equality_residual <= EQUALITY_TOL {
            s.lambda_max_constraint
        } else {
            f64::INFINITY
        };
        return Err(PassivityError::Infeasible { best_lambda_max });
    }
    let mut port_degenerate = false;
    for k in gains {
        let a_k = plant.closed_loop(k);
        let ctrb = linalg::pbh_controllability_margin(&a_k, &plant.b_d)?;
        let obsv = linalg::pbh_observability_margin(&a_k, &plant.c)?;
        if ctrb < 1e-9 || obsv < 1e-9 {
            port_degenerate = true;
        } else if ctrb < 1e-6 || obsv < 1e-6 {
            log::warn!("disturbance port of a certified gain is nearly uncontrollable/unobservable ({ctrb:.2e}, {obsv:.2e})");
        }
    }
    Ok(PassivityCertificate {
        p: linalg::symmetrize(p),
        mode: *mode,
        lambda_max_constraint: s.lambda_max_constraint,
        lambda_min_p: s.lambda_min_p,
        equality_residual: s.equality_residual,
        port_degenerate,
    })
}

/// Orthonormal basis of `n×n` symmetric matrices: `Eᵢᵢ`, then `(Eᵢⱼ + Eⱼᵢ)/√2`.
fn symmetric_basis(n: usize) -> Vec<Mat> {
    let mut basis = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        let mut e = Mat::zeros(n, n);
        e[(i, i)] = 1.0;
        basis.push(e);
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in i + 1..n {
            let mut e = Mat::zeros(n, n);
            e[(i, j)] = h;
            e[(j, i)] = h;
            basis.push(e);
        }
    }
    basis
}

/// Coefficients of the identity in [`symmetric_basis`].
fn identity_coords(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * (n + 1) / 2];
    v[..n].fill(1.0);
    v
}

/// Affine solution set `θ = θ₀ + N x` of `E θ = e`, with orthonormal `N`.
struct AffineSubspace {
    offset: DVector<f64>,
    basis: Mat,
}

impl AffineSubspace {
    fn whole(d: usize) -> Self {
        Self { offset: DVector::zeros(d), basis: Mat::identity(d, d) }
    }

    fn solve(e: &Mat, rhs: &DVector<f64>) -> Result<Self, PassivityError> {
        let d = e.ncols();
        let rows = e.nrows().max(d);
        let mut padded = Mat::zeros(rows, d);
        padded.view_mut((0, 0), (e.nrows(), d)).copy_from(e);
        let svd = padded.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = 1e-10 * smax.max(1.0);
        let offset = svd.solve(&{
            let mut r = DVector::zeros(rows);
            r.rows_mut(0, rhs.len()).copy_from(rhs);
            r
        }, tol).map_err(|_| PassivityError::EqualityInconsistent { residual: f64::INFINITY })?;
        let residual = (e * &offset - rhs).norm();
        if residual > 1e-9 * (1.0 + rhs.norm()) {
            return Err(PassivityError::EqualityInconsistent { residual });
        }
        let v_t = svd.v_t.expect("requested V");
        let null: Vec<_> = (0..d)
            .filter(|&i| svd.singular_values[i] <= tol)
            .map(|i| v_t.row(i).transpose())
            .collect();
        let basis = if null.is_empty() { Mat::zeros(d, 0) } else { Mat::from_columns(&null) };
        Ok(Self { offset, basis })
    }

    fn project(&self, theta: &DVector<f64>) -> Vec<f64> {
        (self.basis.transpose() * (theta - &self.offset)).iter().copied().collect()
    }

    fn lift(&self, x: &[f64]) -> DVector<f64> {
        &self.offset + &self.basis * DVector::from_column_slice(x)
    }
}

/// Storage part `P(θ)` and constraint blocks in terms of the symmetric basis.
fn gain_problem(plant: &LtiPlant, gains: &[Mat]) -> Result<(AffineSym, Vec<AffineSym>), PassivityError> {
    let n = plant.n();
    let basis = symmetric_basis(n);
    let storage = AffineSym { base: Mat::zeros(n, n), terms: basis.clone() };
    let mut blocks = Vec::with_capacity(gains.len());
    for k in gains {
        // kyp_block is affine in P: base at P = 0, terms are the linear part.
        let base = kyp_block(plant, k, &Mat::zeros(n, n))?;
        let terms = basis
            .iter()
            .map(|e| Ok(kyp_block(plant, k, e)? - &base))
            .collect::<Result<Vec<_>, PassivityError>>()?;
        blocks.push(AffineSym { base, terms });
    }
    Ok((storage, blocks))
}

fn storage_equality(plant: &LtiPlant) -> Result<AffineSubspace, PassivityError> {
    let n = plant.n();
    let basis = symmetric_basis(n);
    if plant.has_feedthrough() {
        return Ok(AffineSubspace::whole(basis.len()));
    }
    let cols: Vec<DVector<f64>> = basis
        .iter()
        .map(|e| DVector::from_column_slice((plant.b_d.transpose() * e).as_slice()))
        .collect();
    let e = Mat::from_columns(&cols);
    AffineSubspace::solve(&e, &DVector::from_column_slice(plant.c.as_slice()))
}

/// Searches for a storage matrix certifying every gain in `gains` at once.
pub fn certify_common(
    plant: &LtiPlant,
    gains: &[Mat],
    mode: &PassivityMode,
    opts: &CertifyOptions,
) -> Result<PassivityCertificate, PassivityError> {
    if gains.is_empty() {
        return Err(PassivityError::EmptyGainList);
    }
    if !mode.is_valid() {
        return Err(PassivityError::InvalidMode);
    }
    for k in gains {
        plant.check_gain_shape(k)?;
    }
    let n = plant.n();
    let subspace = storage_equality(plant)?;
    let (storage, blocks) = gain_problem(plant, gains)?;
    let problem = LmiProblem {
        storage: storage.restrict(&subspace.offset, &subspace.basis),
        blocks: blocks.iter().map(|b| b.restrict(&subspace.offset, &subspace.basis)).collect(),
        scale: plant.constraint_scale(),
        eps_p: opts.eps_p,
    };
    let x0 = subspace.project(&DVector::from_vec(identity_coords(n)));
    let result = problem.minimize(&x0, &opts.settings(mode));
    let theta = subspace.lift(&result.x);
    let p = storage_from_coords(n, theta.as_slice());
    match validate_storage(plant, gains, &p, mode, opts.eps_p) {
        Ok(cert) => Ok(cert),
        Err(PassivityError::Infeasible { .. }) => Err(PassivityError::Infeasible { best_lambda_max: result.lambda_max }),
        Err(e) => Err(e),
    }
}

/// Searches for a storage matrix certifying a single gain.
pub fn certify_gain(
    plant: &LtiPlant,
    k: &Mat,
    mode: &PassivityMode,
    opts: &CertifyOptions,
) -> Result<PassivityCertificate, PassivityError> {
    certify_common(plant, std::slice::from_ref(k), mode, opts)
}

fn storage_from_coords(n: usize, theta: &[f64]) -> Mat {
    symmetric_basis(n).iter().zip(theta).fold(Mat::zeros(n, n), |acc, (e, t)| acc + e * *t)
}

/// Finds some passivating gain through the convex `(Z, W)` parametrization:
///
/// ```text
/// D ≠ 0:  [[ZAᵀ + AZ − WᵀB_uᵀ − B_uW, B_d − ZCᵀ], [B_dᵀ − CZ, −D − Dᵀ]] ⪯ 0
/// D = 0:  ZAᵀ + AZ − WᵀB_uᵀ − B_uW ⪯ 0  and  B_dᵀ = CZ
/// ```
///
/// with `K = W Z⁻¹`. The candidate is re-validated with `P = Z⁻¹`; if the
/// congruence loses the margin, `K` is certified with a fresh search instead.
pub fn find_passivating_gain(
    plant: &LtiPlant,
    mode: &PassivityMode,
    opts: &CertifyOptions,
) -> Result<FeasiblePair, PassivityError> {
    if !mode.is_valid() {
        return Err(PassivityError::InvalidMode);
    }
    let n = plant.n();
    let m = plant.m();
    let sym = symmetric_basis(n);
    let ds = sym.len();
    let dw = m * n;
    let d = ds + dw;
    let feed = plant.has_feedthrough();
    let q = plant.p();
    let size = if feed { n + q } else { n };

    // N(Z, W) at θ = 0 and its linear part per coordinate.
    let mut base = Mat::zeros(size, size);
    if feed {
        base.view_mut((0, n), (n, q)).copy_from(&plant.b_d);
        base.view_mut((n, 0), (q, n)).copy_from(&plant.b_d.transpose());
        base.view_mut((n, n), (q, q)).copy_from(&(-(&plant.d + plant.d.transpose())));
    }
    let mut terms = Vec::with_capacity(d);
    let mut storage_terms = Vec::with_capacity(d);
    for e in &sym {
        let mut t = Mat::zeros(size, size);
        t.view_mut((0, 0), (n, n)).copy_from(&(e * plant.a.transpose() + &plant.a * e));
        if feed {
            let off = -(e * plant.c.transpose());
            t.view_mut((0, n), (n, q)).copy_from(&off);
            t.view_mut((n, 0), (q, n)).copy_from(&off.transpose());
        }
        terms.push(t);
        storage_terms.push(e.clone());
    }
    for j in 0..n {
        for i in 0..m {
            let mut w = Mat::zeros(m, n);
            w[(i, j)] = 1.0;
            let bw = &plant.b_u * &w;
            let mut t = Mat::zeros(size, size);
            t.view_mut((0, 0), (n, n)).copy_from(&(-(bw.transpose() + &bw)));
            terms.push(t);
            storage_terms.push(Mat::zeros(n, n));
        }
    }
    let block = AffineSym { base, terms };
    let storage = AffineSym { base: Mat::zeros(n, n), terms: storage_terms };

    let subspace = if feed {
        AffineSubspace::whole(d)
    } else {
        let cols: Vec<DVector<f64>> = (0..d)
            .map(|i| {
                if i < ds {
                    DVector::from_column_slice((&plant.c * &sym[i]).as_slice())
                } else {
                    DVector::zeros(q * n)
                }
            })
            .collect();
        AffineSubspace::solve(&Mat::from_columns(&cols), &DVector::from_column_slice(plant.b_d.transpose().as_slice()))?
    };
    let problem = LmiProblem {
        storage: storage.restrict(&subspace.offset, &subspace.basis),
        blocks: vec![block.restrict(&subspace.offset, &subspace.basis)],
        scale: plant.constraint_scale(),
        eps_p: opts.eps_p,
    };
    let mut nominal = identity_coords(n);
    nominal.extend(std::iter::repeat_n(0.0, dw));
    let x0 = subspace.project(&DVector::from_vec(nominal));
    let result = problem.minimize(&x0, &opts.settings(mode));
    let threshold = mode.threshold();
    if result.lambda_max > threshold {
        return Err(PassivityError::Infeasible { best_lambda_max: result.lambda_max });
    }
    let theta = subspace.lift(&result.x);
    let z = storage_from_coords(n, &theta.as_slice()[..ds]);
    let w = Mat::from_column_slice(m, n, &theta.as_slice()[ds..]);
    let z_inv = z
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(PassivityError::Infeasible { best_lambda_max: result.lambda_max })?;
    let k = &w * &z_inv;
    let certificate = match validate_storage(plant, std::slice::from_ref(&k), &z_inv, mode, opts.eps_p) {
        Ok(c) => c,
        Err(PassivityError::Infeasible { .. }) => certify_gain(plant, &k, mode, opts)?,
        Err(e) => return Err(e),
    };
    Ok(FeasiblePair { z, w, k, certificate })
}

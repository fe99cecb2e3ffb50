//! Dense small-matrix kernels: spectra, Lyapunov equations and the
//! continuous algebraic Riccati equation.
//!
//! Everything here works on `nalgebra::DMatrix<f64>` and is sized for desk
//! problems (a handful of states). The Lyapunov solver vectorizes the
//! equation into an `n² × n²` dense system, so it is capped at
//! [`MAX_LYAPUNOV_DIM`] states.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type Mat = DMatrix<f64>;

/// Spectral abscissa must be strictly below this value for a matrix to count as Hurwitz.
pub const HURWITZ_THRESHOLD: f64 = -1e-12;

/// Largest state dimension accepted by [`solve_lyapunov`].
pub const MAX_LYAPUNOV_DIM: usize = 64;

const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },
    #[error("vectorized Lyapunov system is numerically singular")]
    SingularSystem,
    #[error("state dimension {n} exceeds the supported maximum of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("(A, B) is not stabilizable: uncontrollable mode at {eigenvalue}")]
    NotStabilizable { eigenvalue: Complex64 },
    #[error("(A, sqrt(Q)) is not detectable: unobservable mode at {eigenvalue}")]
    NotDetectable { eigenvalue: Complex64 },
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("Newton-Kleinman iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<Complex64>,
    pub spectral_abscissa: f64,
    /// Smallest eigenvalue, present only when the input was symmetric.
    pub min_eigenvalue_sym: Option<f64>,
}

impl SpectralSummary {
    pub fn is_hurwitz(&self) -> bool {
        self.spectral_abscissa < HURWITZ_THRESHOLD
    }
}

pub fn ensure_square(a: &Mat) -> Result<usize, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NonSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(a.nrows())
}

pub fn symmetrize(x: &Mat) -> Mat {
    (x + x.transpose()) * 0.5
}

pub fn is_symmetric(x: &Mat, rel_tol: f64) -> bool {
    x.is_square() && (x - x.transpose()).amax() <= rel_tol * (1.0 + x.amax())
}

/// Eigenvalues of a square matrix (complex in general).
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>, LinalgError> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok(a.clone().complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_abscissa(a: &Mat) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(a: &Mat) -> bool {
    spectral_abscissa(a).map(|s| s < HURWITZ_THRESHOLD).unwrap_or(false)
}

pub fn spectral_summary(a: &Mat) -> Result<SpectralSummary, LinalgError> {
    let eigenvalues = eigenvalues(a)?;
    let spectral_abscissa = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let min_eigenvalue_sym = if is_symmetric(a, 1e-12) && a.nrows() > 0 {
        Some(sym_min_eigenvalue(a))
    } else {
        None
    };
    Ok(SpectralSummary { eigenvalues, spectral_abscissa, min_eigenvalue_sym })
}

/// Largest eigenvalue of the symmetric part of `x`.
pub fn sym_max_eigenvalue(x: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(x)).eigenvalues.max()
}

/// Smallest eigenvalue of the symmetric part of `x`.
pub fn sym_min_eigenvalue(x: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(x)).eigenvalues.min()
}

/// Solves `A_clᵀ X + X A_cl + Q = 0` for symmetric `X`.
///
/// Uses the Kronecker form `(I ⊗ A_clᵀ + A_clᵀ ⊗ I) vec(X) = -vec(Q)` with a
/// full-pivot LU and up to two steps of iterative refinement.
pub fn solve_lyapunov(a_cl: &Mat, q: &Mat) -> Result<Mat, LinalgError> {
    let n = ensure_square(a_cl)?;
    if q.nrows() != n || q.ncols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "Lyapunov rhs is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    if n > MAX_LYAPUNOV_DIM {
        return Err(LinalgError::TooLarge { n, max: MAX_LYAPUNOV_DIM });
    }
    let abscissa = spectral_abscissa(a_cl)?;
    if abscissa >= HURWITZ_THRESHOLD {
        return Err(LinalgError::NotHurwitz { abscissa });
    }
    let at = a_cl.transpose();
    let eye = Mat::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let lu = op.clone().full_piv_lu();
    let diag = lu.u().diagonal().abs();
    if !lu.is_invertible() || diag.min() <= 1e-15 * diag.max() {
        return Err(LinalgError::SingularSystem);
    }
    let rhs = nalgebra::DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let mut sol = lu.solve(&rhs).ok_or(LinalgError::SingularSystem)?;
    for _ in 0..2 {
        let r = &rhs - &op * &sol;
        if r.amax() <= 1e-15 * (1.0 + rhs.amax()) {
            break;
        }
        if let Some(dx) = lu.solve(&r) {
            sol += dx;
        }
    }
    Ok(symmetrize(&Mat::from_column_slice(n, n, sol.as_slice())))
}

/// Frobenius norm of `A_clᵀ X + X A_cl + Q`.
pub fn lyapunov_residual(a_cl: &Mat, x: &Mat, q: &Mat) -> f64 {
    (a_cl.transpose() * x + x * a_cl + q).norm()
}

fn complex_rank_deficient(m: DMatrix<Complex64>) -> (bool, f64) {
    let sv = m.svd(false, false).singular_values;
    let smax = sv.max().max(1.0);
    let ratio = sv.min() / smax;
    (ratio < 1e-9, ratio)
}

fn unstable_modes(a: &Mat) -> Result<Vec<Complex64>, LinalgError> {
    Ok(eigenvalues(a)?.into_iter().filter(|z| z.re >= HURWITZ_THRESHOLD).collect())
}

fn to_complex(m: &Mat) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// PBH stabilizability test: `rank [A − λI, B] = n` at every eigenvalue with `Re λ ≥ 0`.
pub fn check_stabilizable(a: &Mat, b: &Mat) -> Result<(), LinalgError> {
    let n = ensure_square(a)?;
    if b.nrows() != n {
        return Err(LinalgError::DimensionMismatch("B rows must match A".into()));
    }
    for lam in unstable_modes(a)? {
        let mut m = DMatrix::<Complex64>::zeros(n, n + b.ncols());
        let shifted = to_complex(a) - DMatrix::<Complex64>::identity(n, n) * lam;
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((0, n), (n, b.ncols())).copy_from(&to_complex(b));
        let (deficient, ratio) = complex_rank_deficient(m);
        if deficient {
            return Err(LinalgError::NotStabilizable { eigenvalue: lam });
        }
        if ratio < 1e-6 {
            log::warn!("stabilizability of mode {lam} is borderline (singular value ratio {ratio:.2e})");
        }
    }
    Ok(())
}

/// PBH detectability test on `(A, C)`: `rank [A − λI; C] = n` at every eigenvalue with `Re λ ≥ 0`.
///
/// `rank [A − λI; √Q] = rank [A − λI; Q]`, so passing `Q` directly tests `(A, √Q)`.
pub fn check_detectable(a: &Mat, c: &Mat) -> Result<(), LinalgError> {
    let n = ensure_square(a)?;
    if c.ncols() != n {
        return Err(LinalgError::DimensionMismatch("C columns must match A".into()));
    }
    for lam in unstable_modes(a)? {
        let mut m = DMatrix::<Complex64>::zeros(n + c.nrows(), n);
        let shifted = to_complex(a) - DMatrix::<Complex64>::identity(n, n) * lam;
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((n, 0), (c.nrows(), n)).copy_from(&to_complex(c));
        let (deficient, ratio) = complex_rank_deficient(m);
        if deficient {
            return Err(LinalgError::NotDetectable { eigenvalue: lam });
        }
        if ratio < 1e-6 {
            log::warn!("detectability of mode {lam} is borderline (singular value ratio {ratio:.2e})");
        }
    }
    Ok(())
}

/// Controllability of `(A, B)` by PBH test at every eigenvalue. Returns the
/// smallest singular-value ratio seen; values below ~1e-9 mean rank deficient.
pub fn pbh_controllability_margin(a: &Mat, b: &Mat) -> Result<f64, LinalgError> {
    let n = ensure_square(a)?;
    let mut worst = f64::INFINITY;
    for lam in eigenvalues(a)? {
        let mut m = DMatrix::<Complex64>::zeros(n, n + b.ncols());
        let shifted = to_complex(a) - DMatrix::<Complex64>::identity(n, n) * lam;
        m.view_mut((0, 0), (n, n)).copy_from(&shifted);
        m.view_mut((0, n), (n, b.ncols())).copy_from(&to_complex(b));
        worst = worst.min(complex_rank_deficient(m).1);
    }
    Ok(worst)
}

/// Observability counterpart of [`pbh_controllability_margin`].
pub fn pbh_observability_margin(a: &Mat, c: &Mat) -> Result<f64, LinalgError> {
    pbh_controllability_margin(&a.transpose(), &c.transpose())
}

fn cholesky_inverse(r: &Mat, what: &'static str) -> Result<Mat, LinalgError> {
    r.clone().cholesky().map(|c| c.inverse()).ok_or(LinalgError::NotPositiveDefinite(what))
}

/// Stabilizing solution of `AᵀX + XA − X B R⁻¹ Bᵀ X + Q = 0` and the optimal
/// gain `K* = R⁻¹ Bᵀ X`.
///
/// Newton–Kleinman iteration started from Bass's stabilizing gain.
pub fn solve_care(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<(Mat, Mat), LinalgError> {
    let n = ensure_square(a)?;
    let m = b.ncols();
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(LinalgError::DimensionMismatch("CARE operands have inconsistent shapes".into()));
    }
    let r_inv = cholesky_inverse(&symmetrize(r), "R")?;
    if sym_min_eigenvalue(q) < -1e-12 * (1.0 + q.amax()) {
        return Err(LinalgError::NotPositiveDefinite("Q (semidefinite)"));
    }
    check_stabilizable(a, b)?;
    check_detectable(a, q)?;

    let mut k = bass_initial_gain(a, b, &r_inv)?;
    let qs = symmetrize(q);
    let mut x_prev: Option<Mat> = None;
    for _ in 0..NEWTON_MAX_ITER {
        let a_k = a - b * &k;
        let rhs = &qs + k.transpose() * r * &k;
        let x = solve_lyapunov(&a_k, &rhs)?;
        k = &r_inv * b.transpose() * &x;
        if let Some(prev) = &x_prev {
            if (&x - prev).norm() <= 1e-13 * (1.0 + x.norm()) {
                return finish_care(a, b, q, &r_inv, x);
            }
        }
        x_prev = Some(x);
    }
    let x = x_prev.unwrap_or_else(|| Mat::zeros(n, n));
    let residual = care_residual(a, b, q, &r_inv, &x);
    let scale = 1.0 + a.norm() * x.norm() + q.norm() + x.norm().powi(2) * (b * &r_inv * b.transpose()).norm();
    if residual <= 1e-9 * scale {
        return finish_care(a, b, q, &r_inv, x);
    }
    Err(LinalgError::NoConvergence { iterations: NEWTON_MAX_ITER, residual })
}

fn finish_care(a: &Mat, b: &Mat, q: &Mat, r_inv: &Mat, x: Mat) -> Result<(Mat, Mat), LinalgError> {
    let x = symmetrize(&x);
    let k = r_inv * b.transpose() * &x;
    let residual = care_residual(a, b, q, r_inv, &x);
    let scale = 1.0 + a.norm() * x.norm() + q.norm() + x.norm().powi(2) * (b * r_inv * b.transpose()).norm();
    if residual > 1e-9 * scale || !is_hurwitz(&(a - b * &k)) {
        return Err(LinalgError::NoConvergence { iterations: NEWTON_MAX_ITER, residual });
    }
    Ok((x, k))
}

/// Frobenius norm of the CARE residual.
pub fn care_residual(a: &Mat, b: &Mat, q: &Mat, r_inv: &Mat, x: &Mat) -> f64 {
    (a.transpose() * x + x * a - x * b * r_inv * b.transpose() * x + q).norm()
}

/// Bass's method: for `β` large enough that `−(A + βI)` is Hurwitz, the
/// solution `Z` of `(A+βI)Z + Z(A+βI)ᵀ = 2 B R⁻¹ Bᵀ` gives the stabilizing
/// gain `R⁻¹ Bᵀ Z⁻¹`.
fn bass_initial_gain(a: &Mat, b: &Mat, r_inv: &Mat) -> Result<Mat, LinalgError> {
    let n = a.nrows();
    let eig = eigenvalues(a)?;
    let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if abscissa < HURWITZ_THRESHOLD {
        return Ok(Mat::zeros(b.ncols(), n));
    }
    let spread = eig.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let beta = 2.0 * spread.max(abscissa.max(0.0)) + 1.0;
    let shifted = a + Mat::identity(n, n) * beta;
    let brb = b * r_inv * b.transpose();
    let z = solve_lyapunov(&(-shifted.transpose()), &(brb * 2.0))?;
    // Only stabilizable: Z is singular along the uncontrollable (stable) modes.
    let ridge = 1e-10 * (1.0 + z.amax());
    let z_reg = if sym_min_eigenvalue(&z) > ridge { z } else { z + Mat::identity(n, n) * ridge };
    let z_inv = cholesky_inverse(&z_reg, "Bass Gramian")?;
    let k = r_inv * b.transpose() * z_inv;
    if !is_hurwitz(&(a - b * &k)) {
        return Err(LinalgError::NoConvergence { iterations: 0, residual: f64::INFINITY });
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, v)
    }

    #[test]
    fn scalar_lyapunov() {
        let x = solve_lyapunov(&m(1, 1, &[-2.0]), &m(1, 1, &[4.0])).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_lyapunov() {
        let x = solve_lyapunov(&(-Mat::identity(2, 2)), &Mat::identity(2, 2)).unwrap();
        assert!((x - Mat::identity(2, 2) * 0.5).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_non_hurwitz() {
        let rot = m(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(solve_lyapunov(&rot, &Mat::identity(2, 2)), Err(LinalgError::NotHurwitz { .. })));
    }

    #[test]
    fn lyapunov_rejects_non_square() {
        assert!(matches!(
            solve_lyapunov(&Mat::zeros(2, 3), &Mat::identity(2, 2)),
            Err(LinalgError::NonSquare { .. })
        ));
    }

    #[test]
    fn spectral_examples() {
        let s = spectral_summary(&m(2, 2, &[-1.0, 0.0, 0.0, -3.0])).unwrap();
        assert!((s.spectral_abscissa + 1.0).abs() < 1e-14);
        assert_eq!(s.min_eigenvalue_sym, Some(-3.0));

        // characteristic polynomial λ² + 5λ + 5
        let s = spectral_summary(&m(2, 2, &[-2.0, -1.0, -1.0, -3.0])).unwrap();
        let mut re: Vec<f64> = s.eigenvalues.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        let r5 = 5f64.sqrt();
        assert!((re[0] - (-5.0 - r5) / 2.0).abs() < 1e-12);
        assert!((re[1] - (-5.0 + r5) / 2.0).abs() < 1e-12);

        let s = spectral_summary(&m(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert!(s.spectral_abscissa.abs() < 1e-14);
        assert!(!s.is_hurwitz());
        assert_eq!(s.min_eigenvalue_sym, None);

        assert!(matches!(spectral_summary(&Mat::zeros(1, 2)), Err(LinalgError::NonSquare { .. })));
    }

    #[test]
    fn scalar_care_closed_form() {
        let (x, k) = solve_care(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0])).unwrap();
        let expected = 2f64.sqrt() - 1.0;
        assert!((x[(0, 0)] - expected).abs() < 1e-12);
        assert!((k[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn care_zero_weight() {
        let a = m(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let b = m(2, 1, &[1.0, 1.0]);
        let (x, k) = solve_care(&a, &b, &Mat::zeros(2, 2), &m(1, 1, &[1.0])).unwrap();
        assert!(x.amax() < 1e-14);
        assert!(k.amax() < 1e-14);
    }

    #[test]
    fn care_unstable_plant() {
        let a = m(2, 2, &[1.0, 2.0, 0.0, 3.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let q = Mat::identity(2, 2);
        let r = m(1, 1, &[0.5]);
        let (x, k) = solve_care(&a, &b, &q, &r).unwrap();
        let r_inv = m(1, 1, &[2.0]);
        assert!(care_residual(&a, &b, &q, &r_inv, &x) < 1e-9 * (1.0 + x.norm().powi(2)));
        assert!(is_hurwitz(&(a - b * k)));
    }

    #[test]
    fn care_rejects_unstabilizable() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let err = solve_care(&a, &b, &Mat::identity(2, 2), &m(1, 1, &[1.0])).unwrap_err();
        assert!(matches!(err, LinalgError::NotStabilizable { .. }));
    }

    #[test]
    fn care_rejects_undetectable() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = Mat::identity(2, 2);
        let q = m(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let err = solve_care(&a, &b, &q, &Mat::identity(2, 2)).unwrap_err();
        assert!(matches!(err, LinalgError::NotDetectable { .. }));
    }

    #[test]
    fn care_stabilizable_not_controllable() {
        // second mode uncontrollable but stable
        let a = m(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let b = m(2, 1, &[1.0, 0.0]);
        let (_, k) = solve_care(&a, &b, &Mat::identity(2, 2), &m(1, 1, &[1.0])).unwrap();
        assert!(is_hurwitz(&(a - b * k)));
    }

    #[test]
    fn pbh_margins() {
        let a = m(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert!(pbh_controllability_margin(&a, &m(2, 1, &[1.0, 0.0])).unwrap() < 1e-12);
        assert!(pbh_controllability_margin(&a, &m(2, 1, &[1.0, 1.0])).unwrap() > 1e-3);
        assert!(pbh_observability_margin(&a, &m(1, 2, &[1.0, 1.0])).unwrap() > 1e-3);
    }
}

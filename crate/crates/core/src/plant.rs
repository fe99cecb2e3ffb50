//! The controlled plant `ẋ = Ax + B_u u + B_d d`, `y = Cx + Dd` with LQR
//! weights, and helpers for moving between gain matrices and gain vectors.

use thiserror::Error;

use crate::linalg::{self, Mat};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} contains a non-finite entry")]
    NonFinite(&'static str),
    #[error("Q must be symmetric positive semidefinite")]
    QNotPsd,
    #[error("R must be symmetric positive definite")]
    RNotPd,
}

/// Plant matrices plus LQR weights. Gains act as `u = −K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    pub a: Mat,
    pub b_u: Mat,
    pub b_d: Mat,
    pub c: Mat,
    pub d: Mat,
    pub q: Mat,
    pub r: Mat,
}

impl LtiPlant {
    /// Checks shapes, finiteness, `Q ⪰ 0` and `R ≻ 0`.
    pub fn new(a: Mat, b_u: Mat, b_d: Mat, c: Mat, d: Mat, q: Mat, r: Mat) -> Result<Self, PlantError> {
        for (name, mat) in [("A", &a), ("B_u", &b_u), ("B_d", &b_d), ("C", &c), ("D", &d), ("Q", &q), ("R", &r)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(PlantError::NonFinite(name));
            }
        }
        let n = a.nrows();
        let mismatch = |what: String| Err(PlantError::DimensionMismatch(what));
        if n == 0 || a.ncols() != n {
            return mismatch(format!("A must be square and nonempty, got {}x{}", a.nrows(), a.ncols()));
        }
        let m = b_u.ncols();
        let p = b_d.ncols();
        if b_u.nrows() != n || m == 0 {
            return mismatch(format!("B_u must be {n}xm with m > 0, got {}x{}", b_u.nrows(), b_u.ncols()));
        }
        if b_d.nrows() != n || p == 0 {
            return mismatch(format!("B_d must be {n}xp with p > 0, got {}x{}", b_d.nrows(), b_d.ncols()));
        }
        if c.shape() != (p, n) {
            return mismatch(format!("C must be {p}x{n}, got {}x{}", c.nrows(), c.ncols()));
        }
        if d.shape() != (p, p) {
            return mismatch(format!("D must be {p}x{p}, got {}x{}", d.nrows(), d.ncols()));
        }
        if q.shape() != (n, n) {
            return mismatch(format!("Q must be {n}x{n}, got {}x{}", q.nrows(), q.ncols()));
        }
        if r.shape() != (m, m) {
            return mismatch(format!("R must be {m}x{m}, got {}x{}", r.nrows(), r.ncols()));
        }
        if !linalg::is_symmetric(&q, 1e-12) || linalg::sym_min_eigenvalue(&q) < -1e-12 * (1.0 + q.amax()) {
            return Err(PlantError::QNotPsd);
        }
        if !linalg::is_symmetric(&r, 1e-12) || linalg::sym_min_eigenvalue(&r) <= 0.0 {
            return Err(PlantError::RNotPd);
        }
        Ok(Self { a, b_u, b_d, c, d, q, r })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn p(&self) -> usize {
        self.b_d.ncols()
    }

    /// Number of scalar gain parameters, `m·n`.
    pub fn gain_dim(&self) -> usize {
        self.m() * self.n()
    }

    pub fn has_feedthrough(&self) -> bool {
        self.d.iter().any(|v| *v != 0.0)
    }

    pub fn closed_loop(&self, k: &Mat) -> Mat {
        &self.a - &self.b_u * k
    }

    /// Normalizer `1 + ‖A‖_F` applied to constraint eigenvalues before thresholding.
    pub fn constraint_scale(&self) -> f64 {
        1.0 + self.a.norm()
    }

    pub fn check_gain_shape(&self, k: &Mat) -> Result<(), PlantError> {
        if k.shape() != (self.m(), self.n()) {
            return Err(PlantError::DimensionMismatch(format!(
                "gain must be {}x{}, got {}x{}",
                self.m(),
                self.n(),
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(())
    }

    pub fn gain_from_vec(&self, v: &[f64]) -> Mat {
        unvec(v, self.m(), self.n())
    }
}

/// Column-major vectorization.
pub fn vec(k: &Mat) -> Vec<f64> {
    k.as_slice().to_vec()
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v)
}

/// Plants used throughout the examples and tests.
pub mod benchmarks {
    use super::*;

    /// Two-state, single-input plant with a scalar disturbance port and no
    /// feedthrough. Its stability region is `5 + K₁ + 2K₂ > 0, 5 + K₁ + 3K₂ > 0`
    /// and its optimal LQR gain (`Q = I`, `R = 2`) lies just outside the
    /// passivity region.
    pub fn coupled_two_state() -> LtiPlant {
        LtiPlant::new(
            Mat::from_row_slice(2, 2, &[-2.0, -1.0, -1.0, -3.0]),
            Mat::from_row_slice(2, 1, &[1.0, 2.0]),
            Mat::from_row_slice(2, 1, &[2.0, 1.0]),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
            Mat::zeros(1, 1),
            Mat::identity(2, 2),
            Mat::from_row_slice(1, 1, &[2.0]),
        )
        .expect("benchmark plant is well formed")
    }

    /// `A = I₂, B_u = I₂, B_d = e₁, C = e₁ᵀ, D = 0`: a plant whose set of
    /// passivating gains is not convex.
    pub fn unstable_identity() -> LtiPlant {
        LtiPlant::new(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        )
        .expect("benchmark plant is well formed")
    }

    /// `A = −I₂, B_u = I₂, B_d = e₁, C = e₁ᵀ, D = 0` with `Q = 0`, `R = I`:
    /// already passive in open loop and the zero gain is LQR-optimal.
    pub fn passive_open_loop() -> LtiPlant {
        LtiPlant::new(
            -Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::zeros(2, 2),
            Mat::identity(2, 2),
        )
        .expect("benchmark plant is well formed")
    }

    /// Same as [`passive_open_loop`] but with `Q = I`, so the LQR optimum is a
    /// nonzero gain that still passivates.
    pub fn passive_open_loop_weighted() -> LtiPlant {
        let mut p = passive_open_loop();
        p.q = Mat::identity(2, 2);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_is_column_major() {
        let k = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&k), vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(unvec(&vec(&k), 2, 2), k);
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = benchmarks::coupled_two_state();
        let err = LtiPlant::new(p.a.clone(), p.b_u.clone(), p.b_d.clone(), Mat::zeros(1, 3), p.d, p.q, p.r);
        assert!(matches!(err, Err(PlantError::DimensionMismatch(_))));
    }

    #[test]
    fn rejects_indefinite_r() {
        let p = benchmarks::coupled_two_state();
        let err = LtiPlant::new(p.a, p.b_u, p.b_d, p.c, p.d, p.q, Mat::from_row_slice(1, 1, &[-1.0]));
        assert_eq!(err, Err(PlantError::RNotPd));
    }

    #[test]
    fn dimensions() {
        let p = benchmarks::unstable_identity();
        assert_eq!((p.n(), p.m(), p.p(), p.gain_dim()), (2, 2, 1, 4));
        assert!(!p.has_feedthrough());
    }
}

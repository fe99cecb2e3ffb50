//! Minimizes the largest eigenvalue of a family of affine symmetric matrix
//! functions subject to a positive-definite storage matrix.
//!
//! The nonsmooth `λ_max` is replaced by a log-sum-exp over all block
//! eigenvalues whose temperature is annealed geometrically; `λ_min(P) > ε_P`
//! is enforced with a logarithmic barrier. Plain gradient descent with
//! Armijo backtracking is run from a nominal start and from randomly
//! perturbed restarts. A restart that cannot first reach a positive-definite
//! storage matrix is abandoned.

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{symmetrize, Mat};

/// `x ↦ base + Σ xᵢ termsᵢ`, all terms symmetric.
#[derive(Debug, Clone)]
pub(crate) struct AffineSym {
    pub base: Mat,
    pub terms: Vec<Mat>,
}

impl AffineSym {
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.base.clone();
        for (xi, t) in x.iter().zip(&self.terms) {
            out += t * *xi;
        }
        out
    }

    /// Substitutes `θ = offset + basis·x`.
    pub fn restrict(&self, offset: &DVector<f64>, basis: &Mat) -> AffineSym {
        let mut base = self.base.clone();
        for (oi, t) in offset.iter().zip(&self.terms) {
            base += t * *oi;
        }
        let terms = (0..basis.ncols())
            .map(|j| {
                let mut acc = Mat::zeros(self.base.nrows(), self.base.ncols());
                for (i, t) in self.terms.iter().enumerate() {
                    let c = basis[(i, j)];
                    if c != 0.0 {
                        acc += t * c;
                    }
                }
                acc
            })
            .collect();
        AffineSym { base, terms }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmiProblem {
    pub storage: AffineSym,
    pub blocks: Vec<AffineSym>,
    /// Divides every block eigenvalue.
    pub scale: f64,
    pub eps_p: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct EngineSettings {
    pub restarts: usize,
    pub iterations: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub seed: u64,
    /// Stop as soon as the normalized `λ_max` reaches this value.
    pub target: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct EngineResult {
    pub x: Vec<f64>,
    /// Normalized largest block eigenvalue at `x`; `+∞` when no restart reached `P ≻ ε_P`.
    pub lambda_max: f64,
    pub reached_target: bool,
}

struct Measure {
    value: f64,
    grad: Vec<f64>,
    lambda_max: f64,
}

const STAGES: usize = 4;
const BARRIER_RATIO: f64 = 1e-2;
/// A stage ends early when its objective improves by less than
/// `STALL_TOL·(1 + |value|)` over `STALL_WINDOW` iterations.
const STALL_WINDOW: usize = 25;
const STALL_TOL: f64 = 1e-9;

impl LmiProblem {
    fn dim(&self) -> usize {
        self.storage.terms.len()
    }

    fn lambda_max(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| SymmetricEigen::new(symmetrize(&b.eval(x))).eigenvalues.max())
            .fold(f64::NEG_INFINITY, f64::max)
            / self.scale
    }

    fn storage_min(&self, x: &[f64]) -> f64 {
        SymmetricEigen::new(symmetrize(&self.storage.eval(x))).eigenvalues.min()
    }

    /// Smoothed objective with barrier. `None` outside the barrier domain.
    fn measure(&self, x: &[f64], tau: f64, mu: f64) -> Option<Measure> {
        let d = self.dim();
        let st = SymmetricEigen::new(symmetrize(&self.storage.eval(x)));
        if st.eigenvalues.iter().any(|s| *s <= self.eps_p) {
            return None;
        }
        let mut eigs: Vec<(f64, DVector<f64>, usize)> = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            let e = SymmetricEigen::new(symmetrize(&b.eval(x)));
            for k in 0..e.eigenvalues.len() {
                eigs.push((e.eigenvalues[k] / self.scale, e.eigenvectors.column(k).into_owned(), bi));
            }
        }
        let top = eigs.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = eigs.iter().map(|e| ((e.0 - top) / tau).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut value = top + tau * total.ln();
        let mut grad = vec![0.0; d];
        for ((_, v, bi), w) in eigs.iter().zip(&weights) {
            let w = w / total;
            for (i, t) in self.blocks[*bi].terms.iter().enumerate() {
                grad[i] += w * (t * v).dot(v) / self.scale;
            }
        }
        for k in 0..st.eigenvalues.len() {
            let gap = st.eigenvalues[k] - self.eps_p;
            value -= mu * gap.ln();
            let u = st.eigenvectors.column(k);
            for (i, e) in self.storage.terms.iter().enumerate() {
                grad[i] -= mu * (e * u).dot(&u) / gap;
            }
        }
        Some(Measure { value, grad, lambda_max: top })
    }

    /// Pushes `λ_min(P(x))` above a small positive level. Returns false when it
    /// cannot within the budget.
    fn reach_storage_domain(&self, x: &mut Vec<f64>, iterations: usize) -> bool {
        let goal = (100.0 * self.eps_p).max(1e-6);
        let tau = 1e-3;
        let smooth_neg_min = |x: &[f64]| -> (f64, Vec<f64>, f64) {
            let st = SymmetricEigen::new(symmetrize(&self.storage.eval(x)));
            let min = st.eigenvalues.min();
            let weights: Vec<f64> = st.eigenvalues.iter().map(|s| ((min - s) / tau).exp()).collect();
            let total: f64 = weights.iter().sum();
            let value = -min + tau * total.ln();
            let mut grad = vec![0.0; x.len()];
            for (k, w) in weights.iter().enumerate() {
                let u = st.eigenvectors.column(k);
                for (i, e) in self.storage.terms.iter().enumerate() {
                    grad[i] -= w / total * (e * u).dot(&u);
                }
            }
            (value, grad, min)
        };
        let mut step = 1.0;
        for _ in 0..iterations {
            let (value, grad, min) = smooth_neg_min(x);
            if min >= goal {
                return true;
            }
            let g2: f64 = grad.iter().map(|g| g * g).sum();
            if g2 <= 1e-30 {
                return false;
            }
            let mut t = step * 2.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - t * gi).collect();
                if smooth_neg_min(&trial).0 <= value - 1e-4 * t * g2 {
                    *x = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return self.storage_min(x) >= goal;
            }
            step = t;
        }
        self.storage_min(x) >= goal
    }

    /// Runs the restarts. The first restart starts at `x0` unperturbed.
    pub fn minimize(&self, x0: &[f64], settings: &EngineSettings) -> EngineResult {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mut best = EngineResult { x: x0.to_vec(), lambda_max: f64::INFINITY, reached_target: false };
        let spread = 0.5 + 0.5 * x0.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        for restart in 0..settings.restarts.max(1) {
            let mut x: Vec<f64> = if restart == 0 {
                x0.to_vec()
            } else {
                x0.iter().map(|v| v + spread * rng.random_range(-1.0..1.0)).collect()
            };
            if d > 0 && !self.reach_storage_domain(&mut x, settings.iterations / 2) {
                continue;
            }
            if d == 0 && self.storage_min(&x) <= self.eps_p {
                continue;
            }
            let outcome = self.descend(x, settings);
            if outcome.lambda_max < best.lambda_max {
                best = outcome;
            }
            if best.reached_target {
                break;
            }
        }
        best
    }

    fn descend(&self, mut x: Vec<f64>, settings: &EngineSettings) -> EngineResult {
        let mut best_x = x.clone();
        let mut best_l = self.lambda_max(&x);
        if best_l <= settings.target || x.is_empty() {
            return EngineResult { x, lambda_max: best_l, reached_target: best_l <= settings.target };
        }
        let per_stage = (settings.iterations / STAGES).max(1);
        let ratio = (settings.tau_end / settings.tau_start).powf(1.0 / (STAGES - 1) as f64);
        let mut step = 1.0;
        for stage in 0..STAGES {
            let tau = settings.tau_start * ratio.powi(stage as i32);
            let mu = BARRIER_RATIO * tau;
            let Some(mut cur) = self.measure(&x, tau, mu) else { break };
            let mut checkpoint = cur.value;
            for it in 0..per_stage {
                if it > 0 && it % STALL_WINDOW == 0 {
                    if checkpoint - cur.value <= STALL_TOL * (1.0 + cur.value.abs()) {
                        break;
                    }
                    checkpoint = cur.value;
                }
                if cur.lambda_max < best_l {
                    best_l = cur.lambda_max;
                    best_x = x.clone();
                    if best_l <= settings.target {
                        return EngineResult { x: best_x, lambda_max: best_l, reached_target: true };
                    }
                }
                let g2: f64 = cur.grad.iter().map(|g| g * g).sum();
                if g2 <= 1e-300 {
                    break;
                }
                let mut t = step * 2.0;
                let mut next = None;
                for _ in 0..60 {
                    let trial: Vec<f64> = x.iter().zip(&cur.grad).map(|(xi, gi)| xi - t * gi).collect();
                    if let Some(m) = self.measure(&trial, tau, mu) {
                        if m.value <= cur.value - 1e-4 * t * g2 {
                            next = Some((trial, m));
                            break;
                        }
                    }
                    t *= 0.5;
                }
                let Some((trial, m)) = next else { break };
                x = trial;
                cur = m;
                step = t;
            }
            if cur.lambda_max < best_l {
                best_l = cur.lambda_max;
                best_x = x.clone();
            }
        }
        EngineResult { reached_target: best_l <= settings.target, x: best_x, lambda_max: best_l }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(target: f64) -> EngineSettings {
        EngineSettings { restarts: 3, iterations: 2000, tau_start: 1e-1, tau_end: 1e-4, seed: 7, target }
    }

    #[test]
    fn scalar_problem_reaches_target() {
        // storage p, block 1 - p: feasible for p > 1
        let problem = LmiProblem {
            storage: AffineSym { base: Mat::zeros(1, 1), terms: vec![Mat::identity(1, 1)] },
            blocks: vec![AffineSym { base: Mat::identity(1, 1), terms: vec![-Mat::identity(1, 1)] }],
            scale: 1.0,
            eps_p: 1e-8,
        };
        let res = problem.minimize(&[0.5], &settings(-0.1));
        assert!(res.reached_target);
        assert!(res.x[0] >= 1.1 - 1e-9);
    }

    #[test]
    fn infeasible_problem_reports_best() {
        // block = [[1, 0],[0, -p]]: λ_max ≥ 1 for every p
        let mut base = Mat::zeros(2, 2);
        base[(0, 0)] = 1.0;
        let mut term = Mat::zeros(2, 2);
        term[(1, 1)] = -1.0;
        let problem = LmiProblem {
            storage: AffineSym { base: Mat::zeros(1, 1), terms: vec![Mat::identity(1, 1)] },
            blocks: vec![AffineSym { base, terms: vec![term] }],
            scale: 1.0,
            eps_p: 1e-8,
        };
        let res = problem.minimize(&[1.0], &settings(0.0));
        assert!(!res.reached_target);
        assert!((res.lambda_max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn restrict_composes() {
        let f = AffineSym { base: Mat::zeros(1, 1), terms: vec![Mat::identity(1, 1), Mat::identity(1, 1) * 2.0] };
        let offset = DVector::from_vec(vec![1.0, 1.0]);
        let basis = Mat::from_row_slice(2, 1, &[1.0, -1.0]);
        let g = f.restrict(&offset, &basis);
        // θ = (1 + x, 1 − x): f = θ₁ + 2θ₂ = 3 − x
        assert!((g.eval(&[0.5])[(0, 0)] - 2.5).abs() < 1e-15);
    }
}

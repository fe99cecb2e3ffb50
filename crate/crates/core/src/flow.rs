//! LQR cost as a function of the gain, its gradient, and the projected
//! gradient flow `vec K̇ = −α M(vec K) vec ∇f_K` inside a gain polytope.

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat};
use crate::plant::{self, LtiPlant};
use crate::polytope::{self, GainPolytope, PolytopeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("gain is not stabilizing (spectral abscissa {abscissa:.3e}); the LQR cost is unbounded")]
    NotStabilizing { abscissa: f64 },
    #[error("initial gain is not strictly inside the polytope (min g = {min_g:.3e})")]
    InfeasibleStart { min_g: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid flow config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `f_K = tr X_K` with `A_Kᵀ X + X A_K + Q + KᵀRK = 0` and
/// `A_K Y + Y A_Kᵀ + I = 0`; `∇f_K = 2(RK − B_uᵀ X_K) Y_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEvaluation {
    pub k: Mat,
    pub x: Mat,
    pub y: Mat,
    pub f: f64,
    pub grad: Mat,
    /// Relative residuals of the two Lyapunov equations.
    pub x_residual: f64,
    pub y_residual: f64,
}

pub fn evaluate_cost(plant: &LtiPlant, k: &Mat) -> Result<CostEvaluation, FlowError> {
    if k.shape() != (plant.m(), plant.n()) {
        return Err(FlowError::DimensionMismatch(format!(
            "gain must be {}x{}, got {}x{}",
            plant.m(),
            plant.n(),
            k.nrows(),
            k.ncols()
        )));
    }
    let a_k = plant.closed_loop(k);
    let abscissa = linalg::spectral_abscissa(&a_k)?;
    if !(abscissa < linalg::HURWITZ_THRESHOLD) {
        return Err(FlowError::NotStabilizing { abscissa });
    }
    let lift = |e: LinalgError| match e {
        LinalgError::NotHurwitz { abscissa } => FlowError::NotStabilizing { abscissa },
        other => other.into(),
    };
    let n = plant.n();
    let weight = linalg::symmetrize(&(&plant.q + k.transpose() * &plant.r * k));
    let eye = Mat::identity(n, n);
    let x = linalg::solve_lyapunov(&a_k, &weight).map_err(lift)?;
    let a_kt = a_k.transpose();
    let y = linalg::solve_lyapunov(&a_kt, &eye).map_err(lift)?;
    let x_residual = linalg::lyapunov_residual(&a_k, &x, &weight) / (1.0 + weight.norm());
    let y_residual = linalg::lyapunov_residual(&a_kt, &y, &eye) / (1.0 + eye.norm());
    let grad = (&plant.r * k - plant.b_u.transpose() * &x) * &y * 2.0;
    Ok(CostEvaluation { k: k.clone(), f: x.trace(), x, y, grad, x_residual, y_residual })
}

/// Projected direction at `k`, plus the cost evaluation and `‖M vec ∇f‖`.
struct FieldPoint {
    direction: Vec<f64>,
    cost: CostEvaluation,
    proj_grad_norm: f64,
}

fn field(plant: &LtiPlant, poly: &GainPolytope, k: &[f64], alpha: f64) -> Result<FieldPoint, FlowError> {
    let cost = evaluate_cost(plant, &plant.gain_from_vec(k))?;
    let op = polytope::projection_operator(poly, k)?;
    let pg = op.apply(&plant::vec(&cost.grad));
    let proj_grad_norm = pg.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(FieldPoint { direction: pg.iter().map(|v| -alpha * v).collect(), cost, proj_grad_norm })
}

/// `−α · unvec(M(vec K) · vec ∇f_K)`.
pub fn projected_step_direction(plant: &LtiPlant, poly: &GainPolytope, k: &Mat, alpha: f64) -> Result<Mat, FlowError> {
    check_dims(plant, poly)?;
    let fp = field(plant, poly, &plant::vec(k), alpha)?;
    Ok(plant.gain_from_vec(&fp.direction))
}

fn check_dims(plant: &LtiPlant, poly: &GainPolytope) -> Result<(), FlowError> {
    if poly.dim() != plant.gain_dim() {
        return Err(FlowError::DimensionMismatch(format!(
            "polytope lives in dimension {}, gains have {} entries",
            poly.dim(),
            plant.gain_dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub alpha: f64,
    pub step: f64,
    /// `None` resolves to `1e-8·(1 + f_{K0})`.
    pub tol_grad: Option<f64>,
    pub max_time: f64,
    pub min_step: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { alpha: 1.0, step: 1e-2, tol_grad: None, max_time: 1e4, min_step: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub t: f64,
    pub k: Vec<f64>,
    pub f: f64,
    pub proj_grad_norm: f64,
    /// Smallest constraint value; `+∞` for the whole-space polytope.
    pub min_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxTime,
    StepCollapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub samples: Vec<FlowSample>,
    pub terminal_gain: Mat,
    pub termination: Termination,
    pub tol_grad: f64,
}

impl FlowTrajectory {
    pub fn terminal(&self) -> &FlowSample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }
}

const GROW_AFTER: usize = 5;
const MAX_STEP_FACTOR: f64 = 10.0;

fn axpy(x: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + h * b).collect()
}

/// Classical RK4 step; `None` if any stage leaves the admissible set.
fn rk4_step(plant: &LtiPlant, poly: &GainPolytope, k: &[f64], k1: &[f64], h: f64, alpha: f64) -> Option<Vec<f64>> {
    let stage = |x: Vec<f64>| {
        if poly.min_g(&x) < 0.0 {
            return None;
        }
        field(plant, poly, &x, alpha).ok().map(|fp| fp.direction)
    };
    let k2 = stage(axpy(k, 0.5 * h, k1))?;
    let k3 = stage(axpy(k, 0.5 * h, &k2))?;
    let k4 = stage(axpy(k, h, &k3))?;
    Some(
        (0..k.len())
            .map(|i| k[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect(),
    )
}

/// Integrates the projected flow from `k0` until the projected gradient norm
/// drops below the tolerance.
///
/// A step is rejected and `h` halved when it leaves the polytope, produces a
/// non-stabilizing gain, or increases the cost; after five consecutive
/// accepted steps `h` doubles, capped at `10·h₀`. If `h` falls below
/// `min_step` the trajectory so far is returned with
/// [`Termination::StepCollapse`].
pub fn integrate_flow(
    plant: &LtiPlant,
    poly: &GainPolytope,
    k0: &Mat,
    config: &FlowConfig,
) -> Result<FlowTrajectory, FlowError> {
    check_dims(plant, poly)?;
    for (name, v) in [("alpha", config.alpha), ("step", config.step), ("max_time", config.max_time), ("min_step", config.min_step)] {
        if !(v > 0.0) || v.is_nan() {
            return Err(FlowError::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
    }
    if let Some(t) = config.tol_grad {
        if !(t > 0.0) {
            return Err(FlowError::InvalidConfig(format!("tol_grad must be positive, got {t}")));
        }
    }
    let mut k = plant::vec(k0);
    let min_g0 = poly.min_g(&k);
    if !poly.is_unconstrained() && !(min_g0 > 0.0) {
        return Err(FlowError::InfeasibleStart { min_g: min_g0 });
    }
    let mut here = field(plant, poly, &k, config.alpha)?;
    let tol = config.tol_grad.unwrap_or(1e-8 * (1.0 + here.cost.f));
    let mut t = 0.0;
    let mut samples = vec![FlowSample { t, k: k.clone(), f: here.cost.f, proj_grad_norm: here.proj_grad_norm, min_g: min_g0 }];
    let mut h = config.step;
    let h_max = MAX_STEP_FACTOR * config.step;
    let mut streak = 0usize;

    let termination = loop {
        if here.proj_grad_norm <= tol {
            break Termination::Converged;
        }
        if t >= config.max_time {
            break Termination::MaxTime;
        }
        let h_try = h.min(config.max_time - t).max(config.min_step);
        let accepted = rk4_step(plant, poly, &k, &here.direction, h_try, config.alpha).and_then(|next| {
            let min_g = poly.min_g(&next);
            if min_g < 0.0 {
                return None;
            }
            let fp = field(plant, poly, &next, config.alpha).ok()?;
            let f = here.cost.f;
            (fp.cost.f <= f + 1e-12 * (1.0 + f.abs())).then_some((next, fp, min_g))
        });
        match accepted {
            Some((next, fp, min_g)) => {
                t += h_try;
                k = next;
                here = fp;
                samples.push(FlowSample { t, k: k.clone(), f: here.cost.f, proj_grad_norm: here.proj_grad_norm, min_g });
                streak += 1;
                if streak >= GROW_AFTER {
                    h = (2.0 * h).min(h_max);
                    streak = 0;
                }
            }
            None => {
                streak = 0;
                h *= 0.5;
                if h < config.min_step {
                    break Termination::StepCollapse;
                }
            }
        }
    };
    log::debug!("flow finished: {termination:?} at t = {t:.4e} after {} samples", samples.len());
    Ok(FlowTrajectory { terminal_gain: plant.gain_from_vec(&k), samples, termination, tol_grad: tol })
}

/// `vec ∇f` as a column vector, convenient for finite-difference checks.
pub fn gradient_vec(eval: &CostEvaluation) -> DVector<f64> {
    DVector::from_column_slice(eval.grad.as_slice())
}

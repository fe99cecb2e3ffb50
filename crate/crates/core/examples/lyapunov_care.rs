//! Lyapunov and Riccati solves on the two-state benchmark.

use passivity_synth::linalg::{self, Mat};
use passivity_synth::plant::benchmarks;

fn main() -> Result<(), linalg::LinalgError> {
    let plant = benchmarks::coupled_two_state();
    println!("eigenvalues of A: {:?}", linalg::eigenvalues(&plant.a)?);

    // cost matrix of the zero gain: AᵀX + XA + Q = 0
    let x0 = linalg::solve_lyapunov(&plant.a, &plant.q)?;
    println!("X(K=0) = {x0:.6}residual = {:.2e}", linalg::lyapunov_residual(&plant.a, &x0, &plant.q));

    let (x_star, k_star) = linalg::solve_care(&plant.a, &plant.b_u, &plant.q, &plant.r)?;
    let r_inv = plant.r.clone().try_inverse().expect("R is invertible");
    println!("K* = {k_star:.6}X* = {x_star:.6}");
    println!("CARE residual = {:.2e}", linalg::care_residual(&plant.a, &plant.b_u, &plant.q, &r_inv, &x_star));
    println!("closed-loop abscissa = {:.4}", linalg::spectral_abscissa(&plant.closed_loop(&k_star))?);

    let uncontrollable = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
    let unstable = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
    println!("stabilizable with B = e1: {:?}", linalg::check_stabilizable(&unstable, &uncontrollable));
    Ok(())
}

use proptest::prelude::*;

use passivity_synth::linalg::{self, Mat};
use passivity_synth::passivity::{self, CertifyOptions, PassivityMode, DEFAULT_EPS_P, EQUALITY_TOL};
use passivity_synth::plant::{benchmarks, LtiPlant};

/// Largest eigenvalue of `A_KᵀP + PA_K`, normalized, assembled here from scratch.
fn lyapunov_part(plant: &LtiPlant, k: &Mat, p: &Mat) -> f64 {
    let a_k = &plant.a - &plant.b_u * k;
    let s = a_k.transpose() * p + p * &a_k;
    let s = (&s + s.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.max() / (1.0 + plant.a.norm())
}

fn pair_residuals(plant: &LtiPlant, z: &Mat, w: &Mat) -> (f64, f64) {
    let n = z.transpose() * plant.a.transpose() + &plant.a * z - w.transpose() * plant.b_u.transpose() - &plant.b_u * w;
    let n = (&n + n.transpose()) * 0.5;
    let lam = n.symmetric_eigen().eigenvalues.max() / (1.0 + plant.a.norm());
    let eq = (plant.b_d.transpose() - &plant.c * z).norm();
    (lam, eq)
}

#[test]
fn certificates_survive_independent_checks() {
    let plant = benchmarks::coupled_two_state();
    let mode = PassivityMode::nonstrict();
    for kv in [[-0.5, 0.0], [-0.5, 0.5], [-1.0, 1.0], [-0.2, 1.5]] {
        let k = plant.gain_from_vec(&kv);
        let cert = passivity::certify_gain(&plant, &k, &mode, &CertifyOptions::default()).unwrap();
        assert!(lyapunov_part(&plant, &k, &cert.p) <= mode.threshold());
        assert!((plant.b_d.transpose() * &cert.p - &plant.c).norm() <= EQUALITY_TOL);
        assert!(cert.p.clone().symmetric_eigen().eigenvalues.min() >= DEFAULT_EPS_P);
    }
}

#[test]
fn storage_set_is_convex() {
    let plant = benchmarks::coupled_two_state();
    let mode = PassivityMode::nonstrict();
    let k = plant.gain_from_vec(&[-0.5, 0.5]);
    let p1 = passivity::certify_gain(&plant, &k, &mode, &CertifyOptions::default()).unwrap().p;
    // A deeper target on a cube around K drives the search to a different storage.
    let vertices: Vec<Mat> = [[-0.7, 0.3], [-0.3, 0.3], [-0.7, 0.7], [-0.3, 0.7]]
        .iter()
        .map(|v| plant.gain_from_vec(v))
        .collect();
    let deep = CertifyOptions { target: Some(-5e-2), ..CertifyOptions::with_seed(9) };
    let p2 = passivity::certify_common(&plant, &vertices, &mode, &deep).unwrap().p;
    assert!((&p1 - &p2).norm() > 1e-6, "expected two distinct certificates");
    let mid = (&p1 + &p2) * 0.5;
    passivity::validate_storage(&plant, &[k], &mid, &mode, DEFAULT_EPS_P).unwrap();
}

#[test]
fn convex_combinations_of_feasible_pairs_stay_feasible() {
    let plant = benchmarks::coupled_two_state();
    let mode = PassivityMode::nonstrict();
    let first = passivity::find_passivating_gain(&plant, &mode, &CertifyOptions::default()).unwrap();
    assert!(first.z.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    assert!((&first.k * &first.z - &first.w).norm() <= 1e-9 * (1.0 + first.w.norm()));

    // Second pair from a deep certificate of another gain: Z = P⁻¹, W = KZ.
    let k = plant.gain_from_vec(&[-0.5, 1.0]);
    let deep = CertifyOptions { target: Some(-5e-2), ..CertifyOptions::default() };
    let p = passivity::certify_gain(&plant, &k, &mode, &deep).unwrap().p;
    let z2 = p.try_inverse().unwrap();
    let second = (z2.clone(), &k * &z2);
    let (lam, eq) = pair_residuals(&plant, &second.0, &second.1);
    assert!(lam <= mode.threshold() && eq <= EQUALITY_TOL, "second pair: lambda_max {lam:e}, residual {eq:e}");
    assert!((&first.z - &second.0).norm() + (&first.w - &second.1).norm() > 1e-6, "expected two distinct pairs");

    for theta in [0.25, 0.5, 0.75] {
        let z = &first.z * theta + &second.0 * (1.0 - theta);
        let w = &first.w * theta + &second.1 * (1.0 - theta);
        let (lam, eq) = pair_residuals(&plant, &z, &w);
        assert!(lam <= PassivityMode::nonstrict().threshold(), "theta {theta}: lambda_max {lam:e}");
        assert!(eq <= EQUALITY_TOL, "theta {theta}: equality residual {eq:e}");
        // The combined pair yields a passivating gain through the same change of variables.
        let z_inv = z.clone().try_inverse().unwrap();
        passivity::validate_storage(&plant, &[&w * &z_inv], &z_inv, &PassivityMode::nonstrict(), DEFAULT_EPS_P).unwrap();
    }
}

#[test]
fn ray_along_storage_direction_on_the_identity_plant() {
    let plant = benchmarks::unstable_identity();
    let mode = PassivityMode::nonstrict();
    let k0 = Mat::from_row_slice(2, 2, &[2.0, 2.0, 0.5, 2.0]);
    let p0 = passivity::certify_gain(&plant, &k0, &mode, &CertifyOptions::default()).unwrap().p;
    for t in [1.0, 10.0, 100.0] {
        let k = &k0 + plant.b_u.transpose() * &p0 * t;
        passivity::validate_storage(&plant, &[k], &p0, &mode, DEFAULT_EPS_P).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn certified_gains_are_stabilizing(k1 in -3.0f64..1.0, k2 in -2.0f64..2.0, strict in any::<bool>()) {
        let plant = benchmarks::coupled_two_state();
        let mode = if strict { PassivityMode::strict() } else { PassivityMode::nonstrict() };
        let k = plant.gain_from_vec(&[k1, k2]);
        if passivity::certify_gain(&plant, &k, &mode, &CertifyOptions::default()).is_ok() {
            let abscissa = linalg::spectral_abscissa(&plant.closed_loop(&k)).unwrap();
            if strict {
                prop_assert!(abscissa < 0.0);
            } else {
                prop_assert!(abscissa <= 1e-6);
            }
        }
    }
}

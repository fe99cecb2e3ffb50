use nalgebra::DVector;
use proptest::prelude::*;

use passivity_synth::linalg;
use passivity_synth::passivity::{self, CertifyOptions, PassivityMode};
use passivity_synth::pipeline::{self, PipelineOptions};
use passivity_synth::plant::benchmarks;
use passivity_synth::polytope::{box_covered_by, inscribe_polytope, projection_operator, GainPolytope};

fn inside_closed_form_region(k1: f64, k2: f64) -> bool {
    k1 <= 0.0 && k2 > -5.0 / 3.0 && k1 >= -5.0 - 3.0 * k2 && k1 >= -1.25 - 0.5 * k2
}

#[test]
fn inscribed_box_is_certified_and_covered() {
    let plant = benchmarks::coupled_two_state();
    let mode = PassivityMode::nonstrict();
    let seed = pipeline::seed_gain(&plant, &mode, 0).unwrap();
    let (_, k_star) = linalg::solve_care(&plant.a, &plant.b_u, &plant.q, &plant.r).unwrap();
    let seed: Vec<f64> = seed.k.iter().copied().collect();
    let k_star: Vec<f64> = k_star.iter().copied().collect();
    let region = pipeline::explore_region(&plant, &seed, &k_star, &PipelineOptions::new(mode, 0.4)).unwrap();
    let poly = inscribe_polytope(&region, pipeline::lqr_score(&plant)).unwrap();
    let (lo, hi) = poly.box_bounds().unwrap();

    assert!(box_covered_by(&region, &lo, &hi));
    let mut points = poly.box_vertices();
    points.push(poly.chebyshev_center.clone());
    for k in &points {
        passivity::certify_gain(&plant, &plant.gain_from_vec(k), &mode, &CertifyOptions::default())
            .unwrap_or_else(|e| panic!("{k:?}: {e}"));
        // The closed-form region is an intersection of half-planes, so vertices suffice.
        assert!(inside_closed_form_region(k[0], k[1]), "{k:?} outside the closed-form region");
    }
    // Cost falls toward K*, which sits at K₁ > 0, so the box hugs K₁ = 0.
    assert!(hi[0] > -0.1 && hi[0] < 0.0, "upper K1 face at {}", hi[0]);
}

fn sorted_pair(a: f64, b: f64) -> (f64, f64) {
    (a.min(b), a.max(b) + 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn projector_spectrum_in_unit_interval(
        bounds in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..=4),
        fractions in prop::collection::vec(0.0f64..=1.0, 4),
    ) {
        let (lo, hi): (Vec<f64>, Vec<f64>) = bounds.iter().map(|(a, b)| sorted_pair(*a, *b)).unzip();
        let poly = GainPolytope::from_box(&lo, &hi);
        let k: Vec<f64> = lo.iter().zip(&hi).zip(&fractions).map(|((l, h), t)| l + (h - l) * t).collect();
        let op = projection_operator(&poly, &k).unwrap();
        prop_assert!(linalg::is_symmetric(&op.m_matrix, 1e-9));
        let eig = op.m_matrix.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-9 && eig.max() <= 1.0 + 1e-9, "eigenvalues {eig}");
        prop_assert!(op.f_matrix.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn active_face_is_tangent(
        dim in 1usize..=4,
        axis in 0usize..4,
        upper in any::<bool>(),
        offsets in prop::collection::vec(-0.4f64..0.4, 4),
    ) {
        let axis = axis % dim;
        let lo = vec![-1e4; dim];
        let hi = vec![1e4; dim];
        let poly = GainPolytope::from_box(&lo, &hi);
        let mut k: Vec<f64> = offsets[..dim].iter().map(|o| o * 1e4).collect();
        k[axis] = if upper { hi[axis] } else { lo[axis] };
        let values = poly.values(&k);
        let active = values.iter().filter(|g| **g == 0.0).count();
        prop_assert_eq!(active, 1);
        prop_assert!(values.iter().filter(|g| **g != 0.0).all(|g| *g >= 1e3));

        let mut normal = DVector::zeros(dim);
        normal[axis] = if upper { -1.0 } else { 1.0 };
        let m = projection_operator(&poly, &k).unwrap().m_matrix;
        prop_assert!((&m * normal).norm() <= 1e-3);
    }
}

//! Passivity certificates for single gains, including a pair of passivating
//! gains whose midpoint is not passivating.

use passivity_synth::linalg::Mat;
use passivity_synth::passivity::{certify_gain, CertifyOptions, PassivityMode};
use passivity_synth::plant::benchmarks;

fn main() {
    let mode = PassivityMode::nonstrict();
    let opts = CertifyOptions::default();

    let plant = benchmarks::coupled_two_state();
    for k in [[-0.5, 0.0], [-1.0, 1.0], [0.5, 0.0], [0.048, 0.143]] {
        let gain = Mat::from_row_slice(1, 2, &k);
        match certify_gain(&plant, &gain, &mode, &opts) {
            Ok(cert) => println!("{k:?}: passive, lambda_max = {:.3e}, P = {:.4}", cert.lambda_max_constraint, cert.p),
            Err(e) => println!("{k:?}: {e}"),
        }
    }

    let plant = benchmarks::unstable_identity();
    let k1 = Mat::from_row_slice(2, 2, &[2.0, 2.0, 0.5, 2.0]);
    let k2 = Mat::from_row_slice(2, 2, &[2.0, 0.5, 2.0, 2.0]);
    let mid = (&k1 + &k2) * 0.5;
    for (name, k) in [("K1", &k1), ("K2", &k2), ("(K1+K2)/2", &mid)] {
        let verdict = certify_gain(&plant, k, &mode, &opts).map(|c| c.lambda_max_constraint);
        println!("{name}: {verdict:?}");
    }
}

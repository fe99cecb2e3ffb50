//! Finding some passivating gain through the convex (Z, W) search.

use passivity_synth::passivity::{find_passivating_gain, CertifyOptions, PassivityMode};
use passivity_synth::plant::benchmarks;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mode = PassivityMode::nonstrict();
    for (name, plant) in [
        ("coupled two-state", benchmarks::coupled_two_state()),
        ("passive open loop", benchmarks::passive_open_loop()),
        ("unstable identity", benchmarks::unstable_identity()),
    ] {
        let pair = find_passivating_gain(&plant, &mode, &CertifyOptions::default())?;
        println!("{name}:");
        println!("  K = {:.4}  Z = {:.4}", pair.k, pair.z);
        println!("  lambda_max = {:.3e}, lambda_min(P) = {:.3e}", pair.certificate.lambda_max_constraint, pair.certificate.lambda_min_p);
    }
    Ok(())
}

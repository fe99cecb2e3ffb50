//! Projected gradient flow inside a box versus the unconstrained flow.

use passivity_synth::flow::{evaluate_cost, integrate_flow, FlowConfig};
use passivity_synth::linalg::Mat;
use passivity_synth::plant::benchmarks;
use passivity_synth::polytope::GainPolytope;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = benchmarks::coupled_two_state();
    let k0 = Mat::from_row_slice(1, 2, &[-0.6, 0.8]);
    let e = evaluate_cost(&plant, &k0)?;
    println!("f(K0) = {:.6}, grad = {:.4}", e.f, e.grad);

    let boxed = GainPolytope::from_box(&[-1.0, -0.5], &[0.0, 1.0]);
    for (name, poly) in [("box", boxed), ("unconstrained", GainPolytope::unconstrained(2))] {
        let traj = integrate_flow(&plant, &poly, &k0, &FlowConfig::default())?;
        let last = traj.terminal();
        println!(
            "{name}: {:?} after t = {:.2} ({} samples), K = {:?}, f = {:.8}",
            traj.termination,
            last.t,
            traj.samples.len(),
            last.k,
            last.f
        );
    }
    Ok(())
}

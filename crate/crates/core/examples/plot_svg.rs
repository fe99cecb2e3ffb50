//! Trajectory-only figure: stability region, cost contours and a flow path.

use passivity_synth::flow::{integrate_flow, FlowConfig};
use passivity_synth::linalg::{self, Mat};
use passivity_synth::passivity::PassivityMode;
use passivity_synth::plant::{self, benchmarks};
use passivity_synth::plot::{render_run, PlotConfig, PlotInput};
use passivity_synth::polytope::GainPolytope;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = benchmarks::coupled_two_state();
    let (_, k_star) = linalg::solve_care(&plant.a, &plant.b_u, &plant.q, &plant.r)?;
    let poly = GainPolytope::from_box(&[-1.0, -0.5], &[0.0, 1.0]);
    let traj = integrate_flow(&plant, &poly, &Mat::from_row_slice(1, 2, &[-0.6, 0.8]), &FlowConfig::default())?;

    let input = PlotInput {
        polytope: Some(&poly),
        trajectories: vec![traj.samples.iter().map(|s| s.k.clone()).collect()],
        k_star: plant::vec(&k_star),
        k_hat: plant::vec(&traj.terminal_gain),
        f_k_star: passivity_synth::flow::evaluate_cost(&plant, &k_star)?.f,
        ..Default::default()
    };
    let config = PlotConfig { window: Some([(-3.0, 1.0), (-2.0, 2.0)]), passivity_resolution: None, ..Default::default() };
    let svg = render_run(&plant, &PassivityMode::nonstrict(), &input, &config)?;
    let path = std::env::temp_dir().join("passynth-flow.svg");
    std::fs::write(&path, svg)?;
    println!("wrote {}", path.display());
    Ok(())
}

//! Box inscribed in a verified region and the projection operator inside it.

use passivity_synth::passivity::PassivityMode;
use passivity_synth::pipeline::lqr_score;
use passivity_synth::plant::benchmarks;
use passivity_synth::polytope::{constraints_at, inscribe_polytope, projection_operator};
use passivity_synth::region::{explore, ExploreConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = benchmarks::coupled_two_state();
    let mut config = ExploreConfig::new(vec![-0.8, 0.4], 0.4);
    config.search_box = Some(vec![(-4.0, 0.4), (-2.0, 2.0)]);
    let region = explore(&plant, &PassivityMode::nonstrict(), &config)?;

    let poly = inscribe_polytope(&region, lqr_score(&plant))?;
    let (lo, hi) = poly.box_bounds().expect("inscribed polytopes are boxes");
    println!("box: {lo:?} .. {hi:?}");

    for k in [poly.chebyshev_center.clone(), vec![hi[0], poly.chebyshev_center[1]]] {
        let c = constraints_at(&poly, &k);
        let op = projection_operator(&poly, &k)?;
        println!("k = {k:?}: g = {:?}, active = {:?}", c.g, c.active_set);
        println!("M = {:.4}", op.m_matrix);
    }
    Ok(())
}

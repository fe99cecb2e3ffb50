//! Full synthesis on the two-state benchmark: writes plant, atlas, polytope,
//! trajectory, ledger and figure into a temporary directory.

use passivity_synth::io::PlantSpec;
use passivity_synth::passivity::{PassivityMode, Strictness};
use passivity_synth::pipeline::{run_pipeline, PipelineOptions};
use passivity_synth::plant::benchmarks;
use passivity_synth::plot::PlotConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PlantSpec::from_plant(&benchmarks::coupled_two_state(), Strictness::Nonstrict);
    let mut options = PipelineOptions::new(PassivityMode::nonstrict(), 0.4);
    options.plot = Some(PlotConfig::default());
    let out = std::env::temp_dir().join("passynth-pipeline-example");
    let run = run_pipeline(&spec, &options, &out)?;
    let ledger = &run.ledger;
    println!("K*      = {:?}  f = {:.6}", ledger.k_star, ledger.f_k_star);
    println!("seed    = {:?}", ledger.seed_gain);
    println!("cubes   = {} verified, {} rejected", ledger.verified_cubes, ledger.rejected_cubes);
    if let Some(poly) = &run.polytope {
        println!("box     = {:?}", poly.box_bounds());
    }
    println!("K^      = {:?}  f = {:.6} ({:?})", ledger.terminal_gain, ledger.f_k_hat, ledger.termination);
    println!("timings = {:?}", ledger.timings);
    println!("written to {}", out.display());
    Ok(())
}

//! Flood fill of verified cubes around a passivating seed, printed as a map.

use passivity_synth::passivity::PassivityMode;
use passivity_synth::plant::benchmarks;
use passivity_synth::region::{explore, ExploreConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = benchmarks::coupled_two_state();
    let mut config = ExploreConfig::new(vec![-0.8, 0.4], 0.4);
    config.search_box = Some(vec![(-4.0, 0.4), (-2.0, 2.0)]);
    let region = explore(&plant, &PassivityMode::nonstrict(), &config)?;
    println!("{} verified, {} rejected, connected: {}", region.cubes.len(), region.rejected.len(), region.is_connected());

    // '#' verified, 'x' rejected, rows from high k2 to low k2
    let coords = region.coords();
    let rejected: std::collections::BTreeSet<_> = region.rejected.iter().map(|r| r.coord.clone()).collect();
    let all = coords.iter().chain(&rejected);
    let (i_lo, i_hi) = all.clone().fold((i64::MAX, i64::MIN), |(a, b), c| (a.min(c[0]), b.max(c[0])));
    let (j_lo, j_hi) = all.fold((i64::MAX, i64::MIN), |(a, b), c| (a.min(c[1]), b.max(c[1])));
    for j in (j_lo..=j_hi).rev() {
        let line: String = (i_lo..=i_hi)
            .map(|i| {
                let c = vec![i, j];
                if coords.contains(&c) {
                    '#'
                } else if rejected.contains(&c) {
                    'x'
                } else {
                    '.'
                }
            })
            .collect();
        println!("{:>6.2} {line}", region.center_of(&[0, j])[1]);
    }
    Ok(())
}
